//! Immutable scene snapshots and runtime tileset registration.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::geodesy::EnuFrame;
use crate::par::Parallelism;
use crate::spatial::{self, Bvh, Footprint, Hit, Ray, SpatialError};
use crate::tileset::{load_content, Resolver, TilesetError, TilesetTree, TriangleMesh};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TilesetId(pub u64);

impl std::fmt::Display for TilesetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedTileset {
    pub id: TilesetId,
    pub uri: String,
    pub tree: Option<TilesetTree>,
    /// Indices into [`TerrainScene::meshes`].
    pub mesh_range: std::ops::Range<usize>,
    pub selected_tiles: usize,
    pub triangle_count: usize,
    pub dropped_degenerate: usize,
}

/// A consistent set of tilesets with the BVH over all of their triangles.
#[derive(Debug, Clone, Default)]
pub struct TerrainScene {
    tilesets: Vec<LoadedTileset>,
    meshes: Vec<Arc<TriangleMesh>>,
    bvh: Option<Arc<Bvh>>,
}

impl TerrainScene {
    pub fn tilesets(&self) -> &[LoadedTileset] {
        &self.tilesets
    }

    pub fn tileset(&self, id: TilesetId) -> Option<&LoadedTileset> {
        self.tilesets.iter().find(|t| t.id == id)
    }

    pub fn meshes(&self) -> &[Arc<TriangleMesh>] {
        &self.meshes
    }

    pub fn bvh(&self) -> Option<&Bvh> {
        self.bvh.as_deref()
    }

    pub fn triangle_count(&self) -> usize {
        self.meshes.iter().map(|m| m.triangle_count()).sum()
    }

    pub fn has_geometry(&self) -> bool {
        self.bvh.is_some()
    }

    pub fn raycast(&self, ray: &Ray) -> Option<Hit> {
        self.bvh.as_ref()?.raycast(ray)
    }

    pub fn elevation_range(&self, footprint: &Footprint, frame: &EnuFrame) -> Result<(f64, f64), SpatialError> {
        let bvh = self.bvh.as_ref().ok_or(SpatialError::NoGeometry)?;
        spatial::elevation_range(bvh, footprint, frame)
    }

    /// New snapshot with one more tileset; `self` is left untouched.
    fn with_tileset(
        &self,
        id: TilesetId,
        uri: String,
        tree: Option<TilesetTree>,
        selected_tiles: usize,
        meshes: Vec<TriangleMesh>,
        mode: Parallelism,
    ) -> Result<TerrainScene, SpatialError> {
        let start = self.meshes.len();
        let triangle_count = meshes.iter().map(|m| m.triangle_count()).sum();
        let dropped_degenerate = meshes.iter().map(|m| m.dropped_degenerate).sum();
        let mut all = self.meshes.clone();
        all.extend(meshes.into_iter().map(Arc::new));
        let bvh = match Bvh::build_with(all.clone(), mode) {
            Ok(b) => Some(Arc::new(b)),
            Err(SpatialError::EmptyScene) => None,
            Err(e) => return Err(e),
        };
        let mut tilesets = self.tilesets.clone();
        tilesets.push(LoadedTileset {
            id,
            uri,
            tree,
            mesh_range: start..all.len(),
            selected_tiles,
            triangle_count,
            dropped_degenerate,
        });
        Ok(TerrainScene { tilesets, meshes: all, bvh })
    }
}

/// Shared, atomically swapped scene. Readers take cheap snapshots and never
/// see a half-registered tileset; registrations are serialized.
#[derive(Debug, Default)]
pub struct SceneHandle {
    current: RwLock<Arc<TerrainScene>>,
    writer: Mutex<()>,
    next_id: AtomicU64,
    mode: Parallelism,
}

impl SceneHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_parallelism(mode: Parallelism) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn snapshot(&self) -> Arc<TerrainScene> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Loads the tileset at `uri` at maximum detail and publishes a new
    /// snapshot containing it. On error the current scene is unchanged.
    /// Registering the same URI twice yields two independent tilesets.
    pub fn register_tileset(&self, uri: &str, resolver: &dyn Resolver) -> Result<TilesetId, Error> {
        let loaded = load_content(uri, resolver, self.mode)?;
        self.publish(uri.to_string(), Some(loaded.tree), loaded.selected_tiles, loaded.meshes)
    }

    /// Registers already-decoded meshes, e.g. generated terrain.
    pub fn register_meshes(&self, uri: &str, meshes: Vec<TriangleMesh>) -> Result<TilesetId, Error> {
        let tiles = meshes.len();
        self.publish(uri.to_string(), None, tiles, meshes)
    }

    fn publish(
        &self,
        uri: String,
        tree: Option<TilesetTree>,
        selected_tiles: usize,
        meshes: Vec<TriangleMesh>,
    ) -> Result<TilesetId, Error> {
        if meshes.len() > u32::MAX as usize {
            return Err(TilesetError::MalformedContent("too many meshes".into()).into());
        }
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let base = self.snapshot();
        let id = TilesetId(self.next_id.load(Ordering::SeqCst) + 1);
        let next = base.with_tileset(id, uri, tree, selected_tiles, meshes, self.mode)?;
        self.next_id.store(id.0, Ordering::SeqCst);
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(id)
    }
}
