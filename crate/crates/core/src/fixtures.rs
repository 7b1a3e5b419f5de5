//! Synthetic terrain and tileset fixtures with analytically known surfaces.
//!
//! Terrain is a regular grid in the ENU tangent plane of a site whose
//! vertices are draped onto the ellipsoid: each vertex keeps the latitude and
//! longitude of its tangent-plane position and gets an ellipsoidal height
//! from a height function. Tileset bundles encode such grids as GLB/b3dm
//! files under a `tileset.json`.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::geodesy::{ecef_to_geodetic, enu_frame_at, EnuFrame, GeodeticCoord};
use crate::par::{self, Parallelism};
use crate::spatial::Ray;
use crate::tileset::glb::{GlbWriter, IndexWidth, PrimitiveData};
use crate::tileset::{wrap_b3dm, MemoryResolver, TriangleMesh};

/// Radius of the synthetic crater rim in meters (2500 m wide).
pub const CRATER_RADIUS_M: f64 = 1250.0;
/// Depth of the crater floor below the rim in meters.
pub const CRATER_DEPTH_M: f64 = 500.0;

/// Default fixture site (Aegean, on the ellipsoid).
pub fn default_site() -> GeodeticCoord {
    GeodeticCoord::new(36.404, 25.396, 0.0).expect("valid site")
}

/// Square grid centered on a site.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub site: GeodeticCoord,
    /// Grid spans `[-half_extent, half_extent]` east and north.
    pub half_extent_m: f64,
    /// Cells per side.
    pub cells: usize,
    /// Tiles per side; each tile becomes one mesh.
    pub tiles: usize,
}

impl GridSpec {
    pub fn cell_size_m(&self) -> f64 {
        2.0 * self.half_extent_m / self.cells as f64
    }

    pub fn triangle_count(&self) -> usize {
        2 * self.cells * self.cells
    }

    pub fn frame(&self) -> EnuFrame {
        enu_frame_at(&self.site)
    }
}

/// Ellipsoidal height of the crater surface at ENU offset `(e, n)`: a cone
/// from the rim at height 0 down to `-depth` at the center, flat outside.
pub fn crater_height(e: f64, n: f64) -> f64 {
    let r = e.hypot(n);
    if r >= CRATER_RADIUS_M {
        0.0
    } else {
        -CRATER_DEPTH_M * (1.0 - r / CRATER_RADIUS_M)
    }
}

/// Smooth hills plus seeded per-vertex noise of up to `noise_m`.
pub fn rough_height(seed: u64, noise_m: f64) -> impl Fn(f64, f64) -> f64 + Sync {
    move |e, n| {
        let hills = 12.0 * (e / 37.0).sin() * (n / 53.0).cos() + 5.0 * ((e + n) / 91.0).sin();
        let key = (e.to_bits().rotate_left(17)) ^ n.to_bits() ^ seed;
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        hills + rng.random_range(-noise_m..=noise_m)
    }
}

/// Geodetic position of the draped vertex at ENU offset `(e, n)`.
pub fn draped(frame: &EnuFrame, e: f64, n: f64, height_m: f64) -> GeodeticCoord {
    let on_plane = frame.to_ecef(&Vector3::new(e, n, 0.0));
    let g = ecef_to_geodetic(&on_plane).expect("fixture points are far from the center");
    GeodeticCoord { height_m, ..g }
}

/// Triangulated draped grid, split into `spec.tiles`² meshes anchored at
/// their tile centers.
pub fn grid_terrain(spec: &GridSpec, height: impl Fn(f64, f64) -> f64 + Sync, mode: Parallelism) -> Vec<TriangleMesh> {
    let frame = spec.frame();
    let cell = spec.cell_size_m();
    let tiles = spec.tiles.max(1);
    let jobs: Vec<(usize, usize)> = (0..tiles).flat_map(|ty| (0..tiles).map(move |tx| (tx, ty))).collect();
    par::map(mode, &jobs, |&(tx, ty)| {
        let i0 = tx * spec.cells / tiles;
        let i1 = (tx + 1) * spec.cells / tiles;
        let j0 = ty * spec.cells / tiles;
        let j1 = (ty + 1) * spec.cells / tiles;
        let coord = |i: usize| -spec.half_extent_m + i as f64 * cell;
        let center =
            draped(&frame, 0.5 * (coord(i0) + coord(i1)), 0.5 * (coord(j0) + coord(j1)), spec.site.height_m).to_ecef();
        let cols = i1 - i0 + 1;
        let mut positions = Vec::with_capacity(cols * (j1 - j0 + 1));
        for j in j0..=j1 {
            for i in i0..=i1 {
                let (e, n) = (coord(i), coord(j));
                let g = draped(&frame, e, n, spec.site.height_m + height(e, n));
                positions.push(g.to_ecef().to_vector() - center.to_vector());
            }
        }
        let mut indices = Vec::with_capacity(2 * (i1 - i0) * (j1 - j0));
        for j in 0..(j1 - j0) {
            for i in 0..(i1 - i0) {
                let a = (j * cols + i) as u32;
                let b = a + 1;
                let c = a + cols as u32;
                let d = c + 1;
                indices.push([a, b, d]);
                indices.push([a, d, c]);
            }
        }
        TriangleMesh::new(center, positions, indices).expect("grid meshes are valid")
    })
}

/// Flat plane at the site height.
pub fn flat_terrain(spec: &GridSpec) -> Vec<TriangleMesh> {
    grid_terrain(spec, |_, _| 0.0, Parallelism::default())
}

/// 2500 m wide, 500 m deep cone crater centered on the site.
pub fn crater_spec() -> GridSpec {
    GridSpec { site: default_site(), half_extent_m: 1500.0, cells: 120, tiles: 4 }
}

pub fn crater_terrain() -> Vec<TriangleMesh> {
    grid_terrain(&crater_spec(), crater_height, Parallelism::default())
}

/// Rough 5,000-triangle terrain.
pub fn rough_spec() -> GridSpec {
    GridSpec {
        site: GeodeticCoord::new(47.25, 11.35, 600.0).expect("valid site"),
        half_extent_m: 250.0,
        cells: 50,
        tiles: 2,
    }
}

pub fn rough_terrain(seed: u64) -> Vec<TriangleMesh> {
    grid_terrain(&rough_spec(), rough_height(seed, 2.0), Parallelism::default())
}

/// Just over one million triangles (708² cells).
pub fn large_spec() -> GridSpec {
    GridSpec {
        site: GeodeticCoord::new(-33.9, 18.4, 250.0).expect("valid site"),
        half_extent_m: 3540.0,
        cells: 708,
        tiles: 8,
    }
}

pub fn large_terrain(mode: Parallelism) -> Vec<TriangleMesh> {
    grid_terrain(&large_spec(), rough_height(7, 1.0), mode)
}

/// Ray from `above_m` over the draped point `(e, n)` pointing straight down
/// the ellipsoid normal.
pub fn vertical_ray(frame: &EnuFrame, e: f64, n: f64, above_m: f64) -> Ray {
    let target = draped(frame, e, n, above_m);
    let up = enu_frame_at(&target).up;
    Ray::unbounded(target.to_ecef(), -up).expect("unit direction")
}

/// Seeded rays aimed at random points of the grid from random positions
/// above it, tilted up to `max_tilt_deg` off vertical. With
/// `overshoot > 0` some targets fall outside the grid so rays can miss.
pub fn random_rays(spec: &GridSpec, n: usize, seed: u64, max_tilt_deg: f64, overshoot: f64) -> Vec<Ray> {
    let frame = spec.frame();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reach = spec.half_extent_m * (1.0 + overshoot);
    (0..n)
        .map(|_| {
            let e = rng.random_range(-reach..reach);
            let nn = rng.random_range(-reach..reach);
            let tilt = rng.random_range(0.0..max_tilt_deg).to_radians();
            let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
            let dir_local = Vector3::new(tilt.sin() * azimuth.sin(), tilt.sin() * azimuth.cos(), -tilt.cos());
            let target = frame.to_local(&draped(&frame, e, nn, spec.site.height_m).to_ecef());
            let height = rng.random_range(200.0..2000.0);
            let origin_local = target - dir_local * (height / tilt.cos());
            Ray::unbounded(frame.to_ecef(&origin_local), frame.direction_to_ecef(&dir_local)).expect("unit direction")
        })
        .collect()
}

/// Files of a generated tileset keyed by relative path.
#[derive(Debug, Clone, Default)]
pub struct FixtureBundle {
    /// Relative path of the root `tileset.json`.
    pub root: String,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl FixtureBundle {
    pub fn resolver(&self) -> MemoryResolver {
        let mut r = MemoryResolver::default();
        for (k, v) in &self.files {
            r.insert(k.clone(), v.clone());
        }
        r
    }

    /// Writes all files below `dir` and returns the root tileset path.
    pub fn write_to(&self, dir: &Path) -> io::Result<PathBuf> {
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, bytes)?;
        }
        Ok(dir.join(&self.root))
    }

    fn insert(&mut self, path: &str, bytes: Vec<u8>) {
        self.files.insert(path.to_string(), bytes);
    }
}

/// Encoding options for generated content.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContentStyle {
    pub index_width: IndexWidth,
    pub interleaved: bool,
}

/// ENU grid patch described in the site frame; encoded relative to `center`.
struct Patch {
    /// Local (east, north, up) vertices.
    vertices: Vec<Vector3<f64>>,
    indices: Vec<u32>,
}

fn local_grid(
    frame: &EnuFrame,
    min: (f64, f64),
    max: (f64, f64),
    cells: (usize, usize),
    site_height: f64,
    height: &dyn Fn(f64, f64) -> f64,
) -> Patch {
    let (ni, nj) = cells;
    let mut vertices = Vec::with_capacity((ni + 1) * (nj + 1));
    for j in 0..=nj {
        for i in 0..=ni {
            let e = min.0 + (max.0 - min.0) * i as f64 / ni as f64;
            let n = min.1 + (max.1 - min.1) * j as f64 / nj as f64;
            let g = draped(frame, e, n, site_height + height(e, n));
            vertices.push(frame.to_local(&g.to_ecef()));
        }
    }
    let mut indices = Vec::with_capacity(6 * ni * nj);
    let cols = (ni + 1) as u32;
    for j in 0..nj as u32 {
        for i in 0..ni as u32 {
            let a = j * cols + i;
            indices.extend_from_slice(&[a, a + 1, a + cols + 1, a, a + cols + 1, a + cols]);
        }
    }
    Patch { vertices, indices }
}

impl Patch {
    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Box bounding volume in the tile's z-up frame, padded by 1 m.
    fn bounding_box(&self) -> Value {
        let (lo, hi) = self.bounds();
        let c = (lo + hi) / 2.0;
        let h = (hi - lo) / 2.0 + Vector3::repeat(1.0);
        json!({ "box": [c.x, c.y, c.z, h.x, 0.0, 0.0, 0.0, h.y, 0.0, 0.0, 0.0, h.z] })
    }

    /// GLB with y-up positions relative to the frame origin.
    fn to_glb(&self, style: ContentStyle) -> Vec<u8> {
        let writer =
            GlbWriter { index_width: style.index_width, interleaved: style.interleaved, ..GlbWriter::default() };
        let positions = self.vertices.iter().map(|v| [v.x as f32, v.z as f32, -v.y as f32]).collect();
        writer.write(&[PrimitiveData { positions, indices: self.indices.clone(), ..PrimitiveData::default() }])
    }

    /// b3dm whose positions are ECEF offsets from an `RTC_CENTER` at the
    /// frame origin, so no tile transform is needed.
    fn to_b3dm(&self, frame: &EnuFrame, style: ContentStyle) -> Vec<u8> {
        let writer =
            GlbWriter { index_width: style.index_width, interleaved: style.interleaved, ..GlbWriter::default() };
        let positions = self
            .vertices
            .iter()
            .map(|v| {
                let d = frame.direction_to_ecef(v);
                [d.x as f32, d.z as f32, -d.y as f32]
            })
            .collect();
        let glb =
            writer.write(&[PrimitiveData { positions, indices: self.indices.clone(), ..PrimitiveData::default() }]);
        let o = frame.origin;
        wrap_b3dm(&glb, Some([o.x, o.y, o.z]))
    }
}

fn column_major(m: &Matrix4<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

fn tileset_json(root: Value) -> Vec<u8> {
    let error = root["geometricError"].as_f64().unwrap_or(0.0);
    serde_json::to_vec_pretty(&json!({
        "asset": { "version": "1.0" },
        "geometricError": error,
        "root": root
    }))
    .expect("json")
}

fn flat(_: f64, _: f64) -> f64 {
    0.0
}

/// One tile, one 10 m quad (2 triangles) centered on the site.
pub fn minimal_tileset(site: &GeodeticCoord) -> FixtureBundle {
    let frame = enu_frame_at(site);
    let patch = local_grid(&frame, (-5.0, -5.0), (5.0, 5.0), (1, 1), site.height_m, &flat);
    let mut b = FixtureBundle { root: "tileset.json".into(), ..Default::default() };
    b.insert("tile.glb", patch.to_glb(ContentStyle::default()));
    b.insert(
        "tileset.json",
        tileset_json(json!({
            "transform": column_major(&frame.local_to_ecef_matrix()),
            "boundingVolume": patch.bounding_box(),
            "geometricError": 0.0,
            "refine": "REPLACE",
            "content": { "uri": "tile.glb" }
        })),
    );
    b
}

/// Coarse 2-triangle root replaced by four 8-triangle quadrants.
pub fn replace_two_level(site: &GeodeticCoord) -> FixtureBundle {
    two_level(site, "REPLACE")
}

/// Root base layer plus four quadrant detail layers, all kept.
pub fn add_two_level(site: &GeodeticCoord) -> FixtureBundle {
    two_level(site, "ADD")
}

fn two_level(site: &GeodeticCoord, refine: &str) -> FixtureBundle {
    let frame = enu_frame_at(site);
    let h = site.height_m;
    let mut b = FixtureBundle { root: "tileset.json".into(), ..Default::default() };
    let root_patch = local_grid(&frame, (-50.0, -50.0), (50.0, 50.0), (1, 1), h, &flat);
    b.insert("root.glb", root_patch.to_glb(ContentStyle::default()));
    let mut children = Vec::new();
    for (k, (e0, n0)) in [(-50.0, -50.0), (0.0, -50.0), (-50.0, 0.0), (0.0, 0.0)].into_iter().enumerate() {
        // detail layers float 1 m above the base so ADD content stays distinct
        let lift = if refine == "ADD" { 1.0 } else { 0.0 };
        let patch = local_grid(&frame, (e0, n0), (e0 + 50.0, n0 + 50.0), (2, 2), h + lift, &flat);
        let name = format!("tiles/{k}.glb");
        b.insert(&name, patch.to_glb(ContentStyle { index_width: IndexWidth::U16, interleaved: k % 2 == 1 }));
        children.push(json!({
            "boundingVolume": patch.bounding_box(),
            "geometricError": 0.0,
            "content": { "uri": name }
        }));
    }
    b.insert(
        "tileset.json",
        tileset_json(json!({
            "transform": column_major(&frame.local_to_ecef_matrix()),
            "boundingVolume": root_patch.bounding_box(),
            "geometricError": 10.0,
            "refine": refine,
            "content": { "uri": "root.glb" },
            "children": children
        })),
    );
    b
}

/// Single b3dm tile with an `RTC_CENTER` at the site.
pub fn b3dm_tileset(site: &GeodeticCoord) -> FixtureBundle {
    let frame = enu_frame_at(site);
    let patch = local_grid(&frame, (-20.0, -20.0), (20.0, 20.0), (4, 4), site.height_m, &flat);
    let mut b = FixtureBundle { root: "tileset.json".into(), ..Default::default() };
    b.insert("tile.b3dm", patch.to_b3dm(&frame, ContentStyle { index_width: IndexWidth::U16, interleaved: true }));
    let (lo, hi) = patch.bounds();
    let radius = (hi - lo).norm() / 2.0 + 1.0;
    let center = frame.to_ecef(&((lo + hi) / 2.0));
    b.insert(
        "tileset.json",
        tileset_json(json!({
            "boundingVolume": { "sphere": [center.x, center.y, center.z, radius] },
            "geometricError": 0.0,
            "content": { "uri": "tile.b3dm" }
        })),
    );
    b
}

/// Root without content whose child points at `sub/child.json`.
pub fn external_tileset(site: &GeodeticCoord) -> FixtureBundle {
    let frame = enu_frame_at(site);
    let patch = local_grid(&frame, (-10.0, -10.0), (10.0, 10.0), (2, 1), site.height_m, &flat);
    let mut b = FixtureBundle { root: "tileset.json".into(), ..Default::default() };
    b.insert("sub/tile.glb", patch.to_glb(ContentStyle::default()));
    b.insert(
        "sub/child.json",
        tileset_json(json!({
            "boundingVolume": patch.bounding_box(),
            "geometricError": 0.0,
            "content": { "uri": "tile.glb" }
        })),
    );
    b.insert(
        "tileset.json",
        tileset_json(json!({
            "transform": column_major(&frame.local_to_ecef_matrix()),
            "boundingVolume": patch.bounding_box(),
            "geometricError": 20.0,
            "refine": "REPLACE",
            "children": [{
                "boundingVolume": patch.bounding_box(),
                "geometricError": 5.0,
                "content": { "uri": "sub/child.json" }
            }]
        })),
    );
    b
}

/// Terrain grid as a one-level tileset: a content-less root with one GLB
/// child per tile.
pub fn terrain_tileset(spec: &GridSpec, height: &(dyn Fn(f64, f64) -> f64 + Sync)) -> FixtureBundle {
    let frame = spec.frame();
    let tiles = spec.tiles.max(1);
    let cell = spec.cell_size_m();
    let coord = |i: usize| -spec.half_extent_m + i as f64 * cell;
    let jobs: Vec<(usize, usize)> = (0..tiles).flat_map(|ty| (0..tiles).map(move |tx| (tx, ty))).collect();
    let encoded = par::map(Parallelism::default(), &jobs, |&(tx, ty)| {
        let i0 = tx * spec.cells / tiles;
        let i1 = (tx + 1) * spec.cells / tiles;
        let j0 = ty * spec.cells / tiles;
        let j1 = (ty + 1) * spec.cells / tiles;
        let patch = local_grid(
            &frame,
            (coord(i0), coord(j0)),
            (coord(i1), coord(j1)),
            (i1 - i0, j1 - j0),
            spec.site.height_m,
            height,
        );
        (patch.bounding_box(), patch.to_glb(ContentStyle::default()))
    });
    let mut b = FixtureBundle { root: "tileset.json".into(), ..Default::default() };
    let mut children = Vec::new();
    for ((tx, ty), (bv, glb)) in jobs.iter().zip(encoded) {
        let name = format!("tiles/{tx}_{ty}.glb");
        b.insert(&name, glb);
        children.push(json!({
            "boundingVolume": bv,
            "geometricError": 0.0,
            "content": { "uri": name }
        }));
    }
    let e = spec.half_extent_m;
    b.insert(
        "tileset.json",
        tileset_json(json!({
            "transform": column_major(&frame.local_to_ecef_matrix()),
            "boundingVolume": { "box": [0.0, 0.0, 0.0, e, 0.0, 0.0, 0.0, e, 0.0, 0.0, 0.0, e.max(1000.0)] },
            "geometricError": 2.0 * e,
            "refine": "REPLACE",
            "children": children
        })),
    );
    b
}

pub fn crater_tileset() -> FixtureBundle {
    terrain_tileset(&crater_spec(), &crater_height)
}

/// Flat 200 m square around `site`, 20 cells per side, 2x2 tiles.
pub fn flat_spec(site: GeodeticCoord) -> GridSpec {
    GridSpec { site, half_extent_m: 100.0, cells: 20, tiles: 2 }
}

pub fn flat_tileset(site: GeodeticCoord) -> FixtureBundle {
    terrain_tileset(&flat_spec(site), &flat)
}
