//! `fieldwork bench raycast`: BVH build time and single-ray latency.

use std::sync::Arc;
use std::time::Instant;

use fieldwork_core::fixtures::{self, GridSpec};
use fieldwork_core::geodesy::EnuFrame;
use fieldwork_core::spatial::{Bvh, Ray, SpatialError};
use fieldwork_core::tileset::TriangleMesh;
use fieldwork_core::{EcefVec, Parallelism};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const SYNTHETIC_CELL_M: f64 = 10.0;
const MAX_TILT_DEG: f64 = 5.0;

/// Square 10 m grid with at least `triangles` triangles, on the same site
/// and in 8 x 8 tiles like [`fixtures::large_spec`].
pub fn synthetic_spec(triangles: usize) -> GridSpec {
    let cells = ((triangles.max(2) as f64 / 2.0).sqrt().ceil() as usize).max(1);
    GridSpec {
        cells,
        half_extent_m: cells as f64 * SYNTHETIC_CELL_M / 2.0,
        tiles: 8.min(cells),
        ..fixtures::large_spec()
    }
}

pub fn synthetic_terrain(triangles: usize, mode: Parallelism) -> Vec<TriangleMesh> {
    fixtures::grid_terrain(&synthetic_spec(triangles), fixtures::rough_height(7, 1.0), mode)
}

/// Near-vertical rays aimed at the inner 90% of the meshes' horizontal
/// extent, starting 200 m above the highest vertex. On terrain without
/// holes every one of them hits.
pub fn rays_over(meshes: &[Arc<TriangleMesh>], n: usize, seed: u64) -> Option<Vec<Ray>> {
    let count: usize = meshes.iter().map(|m| m.vertex_count()).sum();
    if count == 0 {
        return None;
    }
    let mean = meshes.iter().fold(Vector3::zeros(), |a, m| a + m.tile_origin.to_vector() * m.vertex_count() as f64)
        / count as f64;
    let frame = EnuFrame::at_ecef(&EcefVec::from(mean)).ok()?;
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for m in meshes {
        for i in 0..m.vertex_count() {
            let l = frame.to_local(&m.vertex_world(i));
            lo = lo.inf(&l);
            hi = hi.sup(&l);
        }
    }
    let margin = (hi - lo) * 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rays = (0..n)
        .map(|_| {
            let e = rng.random_range(lo.x + margin.x..=hi.x - margin.x);
            let nn = rng.random_range(lo.y + margin.y..=hi.y - margin.y);
            let tilt = rng.random_range(0.0..MAX_TILT_DEG).to_radians();
            let az = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = Vector3::new(tilt.sin() * az.sin(), tilt.sin() * az.cos(), -tilt.cos());
            let start = Vector3::new(e, nn, hi.z + 200.0) - dir * (200.0 / tilt.cos());
            Ray::unbounded(frame.to_ecef(&start), frame.direction_to_ecef(&dir)).expect("unit direction")
        })
        .collect();
    Some(rays)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Latency {
    pub min_us: f64,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
    pub mean_us: f64,
}

impl Latency {
    /// Nearest-rank percentiles.
    pub fn from_samples(mut us: Vec<f64>) -> Option<Self> {
        if us.is_empty() {
            return None;
        }
        us.sort_by(f64::total_cmp);
        let rank = |p: f64| us[((p / 100.0 * us.len() as f64).ceil() as usize).clamp(1, us.len()) - 1];
        Some(Self {
            min_us: us[0],
            p50_us: rank(50.0),
            p90_us: rank(90.0),
            p99_us: rank(99.0),
            max_us: us[us.len() - 1],
            mean_us: us.iter().sum::<f64>() / us.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub source: String,
    pub parallel: bool,
    pub triangles: usize,
    pub meshes: usize,
    pub bvh_nodes: usize,
    pub build_s: f64,
    pub rays: usize,
    pub hits: usize,
    pub hit_rate: f64,
    /// One ray at a time on the calling thread.
    pub latency: Latency,
    /// All rays through `raycast_batch`.
    pub batch_rays_per_s: f64,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let l = &self.latency;
        format!(
            "source     {}\n\
             triangles  {} in {} meshes\n\
             build      {:.3} s ({} BVH nodes, {})\n\
             rays       {} ({} hits, hit rate {:.2}%)\n\
             latency    p50 {:.2} us, p90 {:.2} us, p99 {:.2} us (min {:.2}, max {:.2}, mean {:.2})\n\
             batch      {:.0} rays/s\n",
            self.source,
            self.triangles,
            self.meshes,
            self.build_s,
            self.bvh_nodes,
            if self.parallel { "parallel" } else { "sequential" },
            self.rays,
            self.hits,
            100.0 * self.hit_rate,
            l.p50_us,
            l.p90_us,
            l.p99_us,
            l.min_us,
            l.max_us,
            l.mean_us,
            self.batch_rays_per_s,
        )
    }
}

/// Builds the BVH over `meshes`, then times each ray of `rays` singly and
/// the whole set as one batch.
pub fn bench_raycast(
    source: &str,
    meshes: Vec<Arc<TriangleMesh>>,
    rays: &[Ray],
    mode: Parallelism,
) -> Result<BenchReport, SpatialError> {
    let meshes_n = meshes.len();
    let start = Instant::now();
    let bvh = Bvh::build_with(meshes, mode)?;
    let build_s = start.elapsed().as_secs_f64();

    let mut samples = Vec::with_capacity(rays.len());
    let mut hits = 0;
    for r in rays {
        let t = Instant::now();
        let h = std::hint::black_box(bvh.raycast(std::hint::black_box(r)));
        samples.push(t.elapsed().as_secs_f64() * 1e6);
        hits += h.is_some() as usize;
    }
    let t = Instant::now();
    let batch = bvh.raycast_batch(rays, mode);
    let batch_s = t.elapsed().as_secs_f64();
    debug_assert_eq!(batch.iter().filter(|h| h.is_some()).count(), hits);

    let latency =
        Latency::from_samples(samples).ok_or_else(|| SpatialError::InvalidRay("at least one ray is needed".into()))?;
    Ok(BenchReport {
        source: source.to_string(),
        parallel: mode.is_parallel(),
        triangles: bvh.triangle_count(),
        meshes: meshes_n,
        bvh_nodes: bvh.nodes().len(),
        build_s,
        rays: rays.len(),
        hits,
        hit_rate: hits as f64 / rays.len() as f64,
        latency,
        batch_rays_per_s: rays.len() as f64 / batch_s.max(1e-12),
    })
}
