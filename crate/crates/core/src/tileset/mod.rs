//! 3D Tiles ingestion: tileset documents, max-detail selection and tile
//! content decoding.
//!
//! Supported subset: `asset.version` 1.0 or 1.1, `boundingVolume` box,
//! region or sphere, column-major `transform`, `refine`, `content.uri`
//! (plus 1.1 `contents` and legacy `content.url`), external child tilesets,
//! and GLB or b3dm payloads.

pub mod glb;
pub mod mesh;

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::geodesy::{geodetic_to_ecef, GeodeticCoord};
use crate::par::{self, Parallelism};
use crate::spatial::Aabb;

pub use mesh::{decode_content, decode_with_transform, wrap_b3dm, TriangleMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TilesetError {
    #[error("malformed tileset: {0}")]
    MalformedTileset(String),
    #[error("unsupported tileset version {0:?}")]
    UnsupportedVersion(String),
    #[error("malformed tile content: {0}")]
    MalformedContent(String),
    #[error("unsupported primitive: {0}")]
    UnsupportedPrimitive(String),
    #[error("primitive has no POSITION attribute")]
    MissingPositions,
    #[error("cannot read {uri}: {message}")]
    Unreadable { uri: String, message: String },
}

impl TilesetError {
    pub fn code(&self) -> &'static str {
        match self {
            TilesetError::MalformedTileset(_) => "MalformedTileset",
            TilesetError::UnsupportedVersion(_) => "UnsupportedVersion",
            TilesetError::MalformedContent(_) => "MalformedContent",
            TilesetError::UnsupportedPrimitive(_) => "UnsupportedPrimitive",
            TilesetError::MissingPositions => "MissingPositions",
            TilesetError::Unreadable { .. } => "Unreadable",
        }
    }
}

fn malformed(msg: impl Into<String>) -> TilesetError {
    TilesetError::MalformedTileset(msg.into())
}

/// Fetches the bytes behind a resolved URI.
pub trait Resolver: Send + Sync {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, TilesetError>;
}

/// Reads local paths and `file://` URIs.
#[derive(Debug, Clone, Copy, Default)]
pub struct FsResolver;

impl Resolver for FsResolver {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, TilesetError> {
        let path = uri.strip_prefix("file://").unwrap_or(uri);
        if uri.contains("://") && !uri.starts_with("file://") {
            return Err(TilesetError::Unreadable {
                uri: uri.to_string(),
                message: "only local paths and file:// URIs are supported".into(),
            });
        }
        std::fs::read(path).map_err(|e| TilesetError::Unreadable { uri: uri.to_string(), message: e.to_string() })
    }
}

/// In-memory URI table, for tests and generated content.
#[derive(Debug, Clone, Default)]
pub struct MemoryResolver {
    pub files: HashMap<String, Vec<u8>>,
}

impl MemoryResolver {
    pub fn insert(&mut self, uri: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(uri.into(), bytes);
    }
}

impl Resolver for MemoryResolver {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, TilesetError> {
        self.files
            .get(uri)
            .cloned()
            .ok_or_else(|| TilesetError::Unreadable { uri: uri.to_string(), message: "not found".into() })
    }
}

/// Resolves `reference` relative to the document at `base`.
pub fn resolve_uri(base: &str, reference: &str) -> String {
    let reference = reference.split(['?', '#']).next().unwrap_or(reference);
    if reference.contains("://") || reference.starts_with('/') {
        return reference.to_string();
    }
    let (scheme, base_path) = match base.split_once("://") {
        Some((s, p)) => (Some(s), p),
        None => (None, base),
    };
    let dir = Path::new(base_path).parent().unwrap_or_else(|| Path::new(""));
    let mut out = PathBuf::new();
    for c in dir.join(reference).components() {
        match c {
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            Component::CurDir => {}
            other => out.push(other.as_os_str()),
        }
    }
    let joined = out.to_string_lossy().replace('\\', "/");
    match scheme {
        Some(s) => format!("{s}://{joined}"),
        None => joined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refine {
    Replace,
    Add,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundingVolume {
    /// Center followed by three half-axis vectors.
    Box([f64; 12]),
    /// West, south, east, north (radians), min and max height (meters).
    Region([f64; 6]),
    /// Center and radius.
    Sphere([f64; 4]),
}

impl BoundingVolume {
    /// Conservative ECEF axis-aligned bounds. Regions are absolute; boxes
    /// and spheres are placed by the tile's world transform.
    pub fn world_aabb(&self, world: &Matrix4<f64>) -> Aabb {
        let apply = |p: Vector3<f64>| {
            let v = world * Vector4::new(p.x, p.y, p.z, 1.0);
            Vector3::new(v.x, v.y, v.z)
        };
        let mut aabb = Aabb::empty();
        match self {
            BoundingVolume::Box(b) => {
                let c = Vector3::new(b[0], b[1], b[2]);
                let axes =
                    [Vector3::new(b[3], b[4], b[5]), Vector3::new(b[6], b[7], b[8]), Vector3::new(b[9], b[10], b[11])];
                for i in 0..8 {
                    let mut p = c;
                    for (k, a) in axes.iter().enumerate() {
                        p += if i >> k & 1 == 1 { *a } else { -*a };
                    }
                    aabb.grow(&apply(p));
                }
            }
            BoundingVolume::Sphere(s) => {
                let c = Vector3::new(s[0], s[1], s[2]);
                for i in 0..8 {
                    let mut p = c;
                    for k in 0..3 {
                        p[k] += if i >> k & 1 == 1 { s[3] } else { -s[3] };
                    }
                    aabb.grow(&apply(p));
                }
            }
            BoundingVolume::Region(r) => {
                // sample a grid so the bulge between corners is covered
                const STEPS: usize = 8;
                for i in 0..=STEPS {
                    for j in 0..=STEPS {
                        for h in [r[4], r[5]] {
                            let lon = r[0] + (r[2] - r[0]) * i as f64 / STEPS as f64;
                            let lat = r[1] + (r[3] - r[1]) * j as f64 / STEPS as f64;
                            let g = GeodeticCoord {
                                latitude_deg: lat.to_degrees(),
                                longitude_deg: lon.to_degrees(),
                                height_m: h,
                            };
                            aabb.grow(&geodetic_to_ecef(&g).to_vector());
                        }
                    }
                }
                aabb = aabb.padded(aabb.diagonal().norm() * 0.01);
            }
        }
        aabb
    }
}

/// One tile with its transform already composed with its ancestors'.
#[derive(Debug, Clone, PartialEq)]
pub struct TileNode {
    /// Pre-order index within the tree.
    pub id: usize,
    pub bounding_volume: BoundingVolume,
    pub geometric_error: f64,
    pub transform: Matrix4<f64>,
    pub world_transform: Matrix4<f64>,
    pub refine: Refine,
    /// Renderable payload URIs, resolved against their document.
    pub content_uris: Vec<String>,
    pub children: Vec<TileNode>,
    /// Document this node was read from (differs for spliced subtrees).
    pub document_uri: String,
}

impl TileNode {
    pub fn has_content(&self) -> bool {
        !self.content_uris.is_empty()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn walk(&self) -> Vec<&TileNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilesetTree {
    pub root: TileNode,
    pub source_uri: String,
    pub geometric_error_root: f64,
    pub asset_version: String,
}

impl TilesetTree {
    pub fn node_count(&self) -> usize {
        self.root.walk().len()
    }

    pub fn depth(&self) -> usize {
        fn depth(n: &TileNode) -> usize {
            1 + n.children.iter().map(depth).max().unwrap_or(0)
        }
        depth(&self.root)
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawTileset {
    asset: Option<RawAsset>,
    geometric_error: Option<f64>,
    root: Option<Value>,
}

#[derive(Deserialize)]
struct RawAsset {
    version: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawTile {
    bounding_volume: Option<RawVolume>,
    geometric_error: Option<f64>,
    transform: Option<Vec<f64>>,
    refine: Option<String>,
    content: Option<RawContent>,
    #[serde(default)]
    contents: Vec<RawContent>,
    #[serde(default)]
    children: Vec<Value>,
}

#[derive(Deserialize)]
struct RawVolume {
    #[serde(rename = "box")]
    box_: Option<Vec<f64>>,
    region: Option<Vec<f64>>,
    sphere: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawContent {
    uri: Option<String>,
    url: Option<String>,
}

const MAX_TILE_DEPTH: usize = 256;

fn is_tileset_json(uri: &str) -> bool {
    uri.to_ascii_lowercase().ends_with(".json")
}

/// Parses a tileset document, composing transforms down the tree and
/// splicing external child tilesets in place of the content that names them.
pub fn parse_tileset(bytes: &[u8], source_uri: &str, resolver: &dyn Resolver) -> Result<TilesetTree, TilesetError> {
    let mut stack = vec![source_uri.to_string()];
    let (root, geometric_error, version) =
        parse_document(bytes, source_uri, &Matrix4::identity(), None, resolver, &mut stack)?;
    let mut tree = TilesetTree {
        root,
        source_uri: source_uri.to_string(),
        geometric_error_root: geometric_error,
        asset_version: version,
    };
    let mut next = 0;
    number(&mut tree.root, &mut next);
    Ok(tree)
}

/// Fetches and parses the tileset at `uri`.
pub fn load_tileset(uri: &str, resolver: &dyn Resolver) -> Result<TilesetTree, TilesetError> {
    let bytes = resolver.fetch(uri)?;
    parse_tileset(&bytes, uri, resolver)
}

fn number(node: &mut TileNode, next: &mut usize) {
    node.id = *next;
    *next += 1;
    for c in &mut node.children {
        number(c, next);
    }
}

fn parse_document(
    bytes: &[u8],
    uri: &str,
    parent_world: &Matrix4<f64>,
    inherited_refine: Option<Refine>,
    resolver: &dyn Resolver,
    stack: &mut Vec<String>,
) -> Result<(TileNode, f64, String), TilesetError> {
    let raw: RawTileset = serde_json::from_slice(bytes).map_err(|e| malformed(format!("{uri}: {e}")))?;
    let version =
        raw.asset.and_then(|a| a.version).ok_or_else(|| malformed(format!("{uri}: missing asset.version")))?;
    if version != "1.0" && version != "1.1" {
        return Err(TilesetError::UnsupportedVersion(version));
    }
    let geometric_error = raw.geometric_error.ok_or_else(|| malformed(format!("{uri}: missing geometricError")))?;
    let root = raw.root.ok_or_else(|| malformed(format!("{uri}: missing root")))?;
    let node = parse_tile(
        root,
        uri,
        parent_world,
        inherited_refine.unwrap_or(Refine::Replace),
        geometric_error,
        resolver,
        stack,
        0,
    )?;
    Ok((node, geometric_error, version))
}

#[allow(clippy::too_many_arguments)]
fn parse_tile(
    value: Value,
    doc_uri: &str,
    parent_world: &Matrix4<f64>,
    parent_refine: Refine,
    parent_error: f64,
    resolver: &dyn Resolver,
    stack: &mut Vec<String>,
    depth: usize,
) -> Result<TileNode, TilesetError> {
    if depth > MAX_TILE_DEPTH {
        return Err(malformed("tile tree too deep"));
    }
    let raw: RawTile = serde_json::from_value(value).map_err(|e| malformed(format!("{doc_uri}: tile: {e}")))?;

    let volume = raw.bounding_volume.ok_or_else(|| malformed("tile without boundingVolume"))?;
    let bounding_volume = match (volume.box_, volume.region, volume.sphere) {
        (Some(b), _, _) => BoundingVolume::Box(b.try_into().map_err(|_| malformed("box must have 12 numbers"))?),
        (_, Some(r), _) => BoundingVolume::Region(r.try_into().map_err(|_| malformed("region must have 6 numbers"))?),
        (_, _, Some(s)) => BoundingVolume::Sphere(s.try_into().map_err(|_| malformed("sphere must have 4 numbers"))?),
        _ => return Err(malformed("boundingVolume needs box, region or sphere")),
    };

    let geometric_error = raw.geometric_error.ok_or_else(|| malformed("tile without geometricError"))?;
    if !(geometric_error >= 0.0) {
        return Err(malformed("geometricError must be non-negative"));
    }
    if geometric_error > parent_error {
        return Err(malformed(format!("child geometricError {geometric_error} exceeds parent {parent_error}")));
    }

    let transform = match raw.transform {
        None => Matrix4::identity(),
        Some(m) => {
            if m.len() != 16 {
                return Err(malformed("transform must have 16 numbers"));
            }
            let t = Matrix4::from_column_slice(&m);
            let affine = t[(3, 0)] == 0.0 && t[(3, 1)] == 0.0 && t[(3, 2)] == 0.0 && t[(3, 3)] == 1.0;
            let det = t.fixed_view::<3, 3>(0, 0).determinant();
            if !affine || !det.is_finite() || det.abs() < 1e-12 {
                return Err(malformed("transform is not an invertible affine matrix"));
            }
            t
        }
    };
    let world_transform = parent_world * transform;

    let refine = match raw.refine.as_deref() {
        None => parent_refine,
        Some(r) if r.eq_ignore_ascii_case("REPLACE") => Refine::Replace,
        Some(r) if r.eq_ignore_ascii_case("ADD") => Refine::Add,
        Some(other) => return Err(malformed(format!("unknown refine {other:?}"))),
    };

    let mut content_refs = Vec::new();
    for c in raw.content.into_iter().chain(raw.contents) {
        let r = c.uri.or(c.url).ok_or_else(|| malformed("content without uri"))?;
        content_refs.push(resolve_uri(doc_uri, &r));
    }

    let mut children = Vec::with_capacity(raw.children.len());
    for child in raw.children {
        children.push(parse_tile(
            child,
            doc_uri,
            &world_transform,
            refine,
            geometric_error,
            resolver,
            stack,
            depth + 1,
        )?);
    }

    let mut content_uris = Vec::new();
    for uri in content_refs {
        if !is_tileset_json(&uri) {
            content_uris.push(uri);
            continue;
        }
        if stack.contains(&uri) {
            return Err(malformed(format!("cyclic external tileset reference {uri}")));
        }
        let bytes = resolver.fetch(&uri)?;
        stack.push(uri.clone());
        let (mut external, external_error, _) =
            parse_document(&bytes, &uri, &world_transform, Some(refine), resolver, stack)?;
        stack.pop();
        if external_error > geometric_error || external.geometric_error > geometric_error {
            return Err(malformed(format!("external tileset {uri} has larger geometricError than its parent tile")));
        }
        external.document_uri = uri;
        children.push(external);
    }

    Ok(TileNode {
        id: 0,
        bounding_volume,
        geometric_error,
        transform,
        world_transform,
        refine,
        content_uris,
        children,
        document_uri: doc_uri.to_string(),
    })
}

/// Nodes to load when always rendering at the highest level of detail.
///
/// Under REPLACE a node is superseded by whatever content its subtree
/// provides and only kept when none of its descendants carry content; under
/// ADD the node's own content is kept alongside its children's.
pub fn select_max_detail(tree: &TilesetTree) -> Vec<&TileNode> {
    fn visit<'a>(node: &'a TileNode, out: &mut Vec<&'a TileNode>) {
        let start = out.len();
        match node.refine {
            Refine::Add => {
                if node.has_content() {
                    out.push(node);
                }
                for c in &node.children {
                    visit(c, out);
                }
            }
            Refine::Replace => {
                for c in &node.children {
                    visit(c, out);
                }
                if out.len() == start && node.has_content() {
                    out.push(node);
                }
            }
        }
    }
    let mut out = Vec::new();
    visit(&tree.root, &mut out);
    out
}

/// A tileset resolved to meshes, one per selected content payload.
#[derive(Debug, Clone)]
pub struct LoadedContent {
    pub tree: TilesetTree,
    pub selected_tiles: usize,
    pub meshes: Vec<TriangleMesh>,
}

/// Parses `uri`, selects max-detail tiles and decodes their payloads,
/// decoding distinct tiles in parallel when `mode` allows.
pub fn load_content(uri: &str, resolver: &dyn Resolver, mode: Parallelism) -> Result<LoadedContent, TilesetError> {
    let tree = load_tileset(uri, resolver)?;
    let jobs: Vec<(&TileNode, &String)> =
        select_max_detail(&tree).into_iter().flat_map(|n| n.content_uris.iter().map(move |u| (n, u))).collect();
    let selected_tiles = jobs.len();
    let decoded = par::map(mode, &jobs, |(node, content)| {
        let bytes = resolver.fetch(content)?;
        decode_content(&bytes, node)
    });
    let meshes = decoded.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(LoadedContent { tree, selected_tiles, meshes })
}
