//! Tile payload decoding into ECEF-anchored triangle meshes.

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3, Vector4};

use super::glb::{self, AccessorView, Glb, GLB_MAGIC};
use super::{TileNode, TilesetError};
use crate::geodesy::EcefVec;

pub const B3DM_MAGIC: &[u8; 4] = b"b3dm";
const B3DM_HEADER_LEN: usize = 28;

// Offsets farther than this from the transform origin trigger re-basing.
const REBASE_THRESHOLD_M: f64 = 1_000.0;
const MAX_NODE_DEPTH: usize = 64;

/// Triangles positioned as 64-bit offsets from a 64-bit ECEF tile origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub tile_origin: EcefVec,
    /// Per-vertex offsets from `tile_origin`, ECEF axes, meters.
    pub positions: Vec<Vector3<f64>>,
    pub indices: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f32; 4]>>,
    pub uvs: Option<Vec<[f32; 2]>>,
    pub base_color: Option<[f32; 4]>,
    /// Zero-area triangles removed while loading.
    pub dropped_degenerate: usize,
}

impl TriangleMesh {
    /// Builds a mesh, dropping zero-area triangles and rejecting bad indices.
    pub fn new(
        tile_origin: EcefVec,
        positions: Vec<Vector3<f64>>,
        indices: Vec<[u32; 3]>,
    ) -> Result<Self, TilesetError> {
        let mut mesh =
            Self { tile_origin, positions, indices, colors: None, uvs: None, base_color: None, dropped_degenerate: 0 };
        mesh.validate_and_clean()?;
        Ok(mesh)
    }

    fn validate_and_clean(&mut self) -> Result<(), TilesetError> {
        let n = self.positions.len();
        if let Some(bad) = self.indices.iter().flatten().find(|&&i| i as usize >= n) {
            return Err(TilesetError::MalformedContent(format!("index {bad} out of range for {n} vertices")));
        }
        if self.positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(TilesetError::MalformedContent("non-finite vertex position".into()));
        }
        let before = self.indices.len();
        let positions = &self.positions;
        self.indices.retain(|t| {
            let a = positions[t[0] as usize];
            let e1 = positions[t[1] as usize] - a;
            let e2 = positions[t[2] as usize] - a;
            e1.cross(&e2) != Vector3::zeros()
        });
        self.dropped_degenerate += before - self.indices.len();
        Ok(())
    }

    pub fn triangle_count(&self) -> usize {
        self.indices.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    /// Triangle corners as offsets from `tile_origin`.
    #[inline]
    pub fn triangle_local(&self, t: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.indices[t];
        [self.positions[a as usize], self.positions[b as usize], self.positions[c as usize]]
    }

    pub fn triangle_world(&self, t: usize) -> [EcefVec; 3] {
        self.triangle_local(t).map(|p| self.tile_origin.offset(&p))
    }

    pub fn vertex_world(&self, i: usize) -> EcefVec {
        self.tile_origin.offset(&self.positions[i])
    }

    /// Same geometry expressed relative to another origin.
    pub fn rebased(&self, origin: EcefVec) -> TriangleMesh {
        let shift = self.tile_origin.to_vector() - origin.to_vector();
        TriangleMesh {
            tile_origin: origin,
            positions: self.positions.iter().map(|p| p + shift).collect(),
            ..self.clone()
        }
    }
}

/// Sniffs the payload magic and decodes GLB or b3dm into a mesh placed by
/// the node's composed world transform.
pub fn decode_content(bytes: &[u8], node: &TileNode) -> Result<TriangleMesh, TilesetError> {
    decode_with_transform(bytes, &node.world_transform)
}

pub fn decode_with_transform(bytes: &[u8], world: &Matrix4<f64>) -> Result<TriangleMesh, TilesetError> {
    match bytes.get(0..4) {
        Some(m) if m == GLB_MAGIC => decode_glb(bytes, world, None),
        Some(m) if m == B3DM_MAGIC => {
            let (rtc, glb) = split_b3dm(bytes)?;
            decode_glb(glb, world, rtc)
        }
        _ => Err(TilesetError::MalformedContent("unrecognized tile content magic".into())),
    }
}

/// Parses the 28-byte b3dm header, reads `RTC_CENTER` from the feature
/// table, skips the batch table and returns the embedded GLB.
pub fn split_b3dm(bytes: &[u8]) -> Result<(Option<[f64; 3]>, &[u8]), TilesetError> {
    if bytes.len() < B3DM_HEADER_LEN || &bytes[0..4] != B3DM_MAGIC {
        return Err(TilesetError::MalformedContent("truncated b3dm header".into()));
    }
    let version = glb::read_u32(bytes, 4)?;
    if version != 1 {
        return Err(TilesetError::MalformedContent(format!("b3dm version {version}")));
    }
    let total = glb::read_u32(bytes, 8)? as usize;
    let mut sections = [0usize; 4];
    for (k, slot) in sections.iter_mut().enumerate() {
        *slot = glb::read_u32(bytes, 12 + 4 * k)? as usize;
    }
    let ft_json = sections[0];
    if total > bytes.len() {
        return Err(TilesetError::MalformedContent("b3dm byteLength exceeds data".into()));
    }
    let glb_start = sections
        .iter()
        .try_fold(B3DM_HEADER_LEN, |acc, &l| acc.checked_add(l))
        .filter(|&s| s <= total)
        .ok_or_else(|| TilesetError::MalformedContent("b3dm tables exceed byteLength".into()))?;

    let ft = &bytes[B3DM_HEADER_LEN..B3DM_HEADER_LEN + ft_json];
    let rtc = if ft_json == 0 || ft.iter().all(|b| b.is_ascii_whitespace()) {
        None
    } else {
        let table: serde_json::Value = serde_json::from_slice(ft)
            .map_err(|e| TilesetError::MalformedContent(format!("b3dm feature table: {e}")))?;
        match table.get("RTC_CENTER") {
            None => None,
            Some(v) => Some(
                serde_json::from_value::<[f64; 3]>(v.clone())
                    .map_err(|_| TilesetError::MalformedContent("RTC_CENTER must be three numbers".into()))?,
            ),
        }
    };
    Ok((rtc, &bytes[glb_start..total]))
}

/// glTF is y-up; tiles are z-up. Maps (x, y, z) to (x, -z, y).
pub fn y_up_to_z_up() -> Matrix4<f64> {
    Matrix4::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
}

fn node_local_matrix(node: &glb::Node) -> Matrix4<f64> {
    if let Some(m) = node.matrix {
        return Matrix4::from_column_slice(&m);
    }
    let t = node.translation.unwrap_or([0.0; 3]);
    let r = node.rotation.unwrap_or([0.0, 0.0, 0.0, 1.0]);
    let s = node.scale.unwrap_or([1.0; 3]);
    let rotation = UnitQuaternion::from_quaternion(Quaternion::new(r[3], r[0], r[1], r[2]));
    Matrix4::new_translation(&Vector3::new(t[0], t[1], t[2]))
        * rotation.to_homogeneous()
        * Matrix4::new_nonuniform_scaling(&Vector3::new(s[0], s[1], s[2]))
}

fn decode_glb(bytes: &[u8], world: &Matrix4<f64>, b3dm_rtc: Option<[f64; 3]>) -> Result<TriangleMesh, TilesetError> {
    let glb = Glb::parse(bytes)?;
    let doc = &glb.document;
    for ext in &doc.extensions_required {
        if ext.contains("draco") || ext.contains("meshopt") || ext == "KHR_mesh_quantization" {
            return Err(TilesetError::UnsupportedPrimitive(format!("required extension {ext}")));
        }
    }
    let buffers = glb.buffers()?;
    let rtc = b3dm_rtc.or_else(|| doc.cesium_rtc()).unwrap_or([0.0; 3]);
    let rtc = Vector3::new(rtc[0], rtc[1], rtc[2]);

    // world = T_tile * Translate(rtc) * YtoZ * N_node; offsets are taken
    // relative to T_tile * rtc so the large translation never touches them.
    let origin4 = world * Vector4::new(rtc.x, rtc.y, rtc.z, 1.0);
    let mut tile_origin = EcefVec::new(origin4.x, origin4.y, origin4.z);
    let linear = world.fixed_view::<3, 3>(0, 0).into_owned();
    let to_tile = y_up_to_z_up();

    let mut instances: Vec<(usize, Matrix4<f64>)> = Vec::new();
    if doc.nodes.is_empty() {
        instances.extend((0..doc.meshes.len()).map(|m| (m, Matrix4::identity())));
    } else {
        let roots: Vec<usize> = match doc.scenes.get(doc.scene.unwrap_or(0)) {
            Some(scene) => scene.nodes.clone(),
            None => {
                let mut is_child = vec![false; doc.nodes.len()];
                for n in &doc.nodes {
                    for &c in &n.children {
                        if let Some(flag) = is_child.get_mut(c) {
                            *flag = true;
                        }
                    }
                }
                (0..doc.nodes.len()).filter(|&i| !is_child[i]).collect()
            }
        };
        // reversed so that popping visits scene roots in document order
        let mut stack: Vec<(usize, Matrix4<f64>, usize)> =
            roots.into_iter().rev().map(|r| (r, Matrix4::identity(), 0)).collect();
        while let Some((index, parent, depth)) = stack.pop() {
            if depth > MAX_NODE_DEPTH {
                return Err(TilesetError::MalformedContent("glTF node graph too deep".into()));
            }
            let node =
                doc.nodes.get(index).ok_or_else(|| TilesetError::MalformedContent(format!("node {index} missing")))?;
            let global = parent * node_local_matrix(node);
            if let Some(m) = node.mesh {
                instances.push((m, global));
            }
            for &c in node.children.iter().rev() {
                stack.push((c, global, depth + 1));
            }
        }
    }

    let mut positions: Vec<Vector3<f64>> = Vec::new();
    let mut indices: Vec<[u32; 3]> = Vec::new();
    let mut colors: Vec<[f32; 4]> = Vec::new();
    let mut uvs: Vec<[f32; 2]> = Vec::new();
    let mut any_color = false;
    let mut any_uv = false;
    let mut base_color = None;
    let mut saw_primitive = false;

    for (mesh_index, node_matrix) in instances {
        let mesh = doc
            .meshes
            .get(mesh_index)
            .ok_or_else(|| TilesetError::MalformedContent(format!("mesh {mesh_index} missing")))?;
        let full = to_tile * node_matrix;
        let full_linear = linear * full.fixed_view::<3, 3>(0, 0);
        let full_translation = linear * full.fixed_view::<3, 1>(0, 3);
        for prim in &mesh.primitives {
            saw_primitive = true;
            let mode = prim.mode.unwrap_or(glb::MODE_TRIANGLES);
            if mode != glb::MODE_TRIANGLES {
                return Err(TilesetError::UnsupportedPrimitive(format!("primitive mode {mode}")));
            }
            if let Some(ext) = prim.extensions.as_ref().and_then(|e| e.as_object()) {
                if let Some(name) = ext.keys().find(|k| k.contains("draco") || k.contains("meshopt")) {
                    return Err(TilesetError::UnsupportedPrimitive(format!("compressed primitive ({name})")));
                }
            }
            let pos_index = *prim.attributes.get("POSITION").ok_or(TilesetError::MissingPositions)?;
            let pos = AccessorView::new(doc, &buffers, pos_index)?;
            if pos.width != 3 || pos.component_type != glb::COMPONENT_F32 {
                return Err(TilesetError::MalformedContent("POSITION must be a float VEC3 accessor".into()));
            }
            let base = positions.len();
            if base + pos.count > u32::MAX as usize {
                return Err(TilesetError::MalformedContent("too many vertices".into()));
            }
            for i in 0..pos.count {
                let p = Vector3::new(pos.get(i, 0), pos.get(i, 1), pos.get(i, 2));
                positions.push(full_linear * p + full_translation);
            }

            let color_view = match prim.attributes.get("COLOR_0") {
                Some(&c) => {
                    let view = AccessorView::new(doc, &buffers, c)?;
                    if !(view.width == 3 || view.width == 4) || view.count != pos.count {
                        return Err(TilesetError::MalformedContent("bad COLOR_0 accessor".into()));
                    }
                    Some(view)
                }
                None => None,
            };
            let uv_view = match prim.attributes.get("TEXCOORD_0") {
                Some(&c) => {
                    let view = AccessorView::new(doc, &buffers, c)?;
                    if view.width != 2 || view.count != pos.count {
                        return Err(TilesetError::MalformedContent("bad TEXCOORD_0 accessor".into()));
                    }
                    Some(view)
                }
                None => None,
            };
            colors.resize(base, [1.0; 4]);
            uvs.resize(base, [0.0; 2]);
            for i in 0..pos.count {
                colors.push(match &color_view {
                    Some(v) => {
                        let a = if v.width == 4 { v.get(i, 3) as f32 } else { 1.0 };
                        [v.get(i, 0) as f32, v.get(i, 1) as f32, v.get(i, 2) as f32, a]
                    }
                    None => [1.0; 4],
                });
                uvs.push(match &uv_view {
                    Some(v) => [v.get(i, 0) as f32, v.get(i, 1) as f32],
                    None => [0.0; 2],
                });
            }
            any_color |= color_view.is_some();
            any_uv |= uv_view.is_some();

            if base_color.is_none() {
                base_color = prim
                    .material
                    .and_then(|m| doc.materials.get(m))
                    .and_then(|m| m.pbr_metallic_roughness.as_ref())
                    .and_then(|p| p.base_color_factor);
            }

            match prim.indices {
                Some(idx) => {
                    let view = AccessorView::new(doc, &buffers, idx)?;
                    if view.width != 1
                        || !matches!(view.component_type, glb::COMPONENT_U8 | glb::COMPONENT_U16 | glb::COMPONENT_U32)
                    {
                        return Err(TilesetError::MalformedContent("bad index accessor".into()));
                    }
                    if view.count % 3 != 0 {
                        return Err(TilesetError::MalformedContent("index count is not a multiple of 3".into()));
                    }
                    for t in 0..view.count / 3 {
                        let mut tri = [0u32; 3];
                        for (k, slot) in tri.iter_mut().enumerate() {
                            let i = view.index(3 * t + k);
                            if i as usize >= pos.count {
                                return Err(TilesetError::MalformedContent(format!(
                                    "index {i} out of range for {} vertices",
                                    pos.count
                                )));
                            }
                            *slot = i + base as u32;
                        }
                        indices.push(tri);
                    }
                }
                None => {
                    if pos.count % 3 != 0 {
                        return Err(TilesetError::MalformedContent("vertex count is not a multiple of 3".into()));
                    }
                    indices.extend((0..pos.count / 3).map(|t| {
                        let b = (base + 3 * t) as u32;
                        [b, b + 1, b + 2]
                    }));
                }
            }
        }
    }
    if !saw_primitive {
        return Err(TilesetError::MissingPositions);
    }

    if let Some(center) = bbox_center(&positions) {
        if center.norm() > REBASE_THRESHOLD_M {
            tile_origin = tile_origin.offset(&center);
            for p in &mut positions {
                *p -= center;
            }
        }
    }

    let mut mesh = TriangleMesh::new(tile_origin, positions, indices)?;
    mesh.colors = any_color.then_some(colors);
    mesh.uvs = any_uv.then_some(uvs);
    mesh.base_color = base_color;
    Ok(mesh)
}

fn bbox_center(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let first = points.first()?;
    let (min, max) = points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    Some((min + max) / 2.0)
}

/// Wraps a GLB in a b3dm container with an optional `RTC_CENTER`.
pub fn wrap_b3dm(glb: &[u8], rtc_center: Option<[f64; 3]>) -> Vec<u8> {
    let mut feature_json = match rtc_center {
        Some(c) => serde_json::json!({ "BATCH_LENGTH": 0, "RTC_CENTER": c }),
        None => serde_json::json!({ "BATCH_LENGTH": 0 }),
    }
    .to_string()
    .into_bytes();
    while !(B3DM_HEADER_LEN + feature_json.len()).is_multiple_of(8) {
        feature_json.push(b' ');
    }
    let total = B3DM_HEADER_LEN + feature_json.len() + glb.len();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(B3DM_MAGIC);
    for v in [1u32, total as u32, feature_json.len() as u32, 0, 0, 0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&feature_json);
    out.extend_from_slice(glb);
    out
}
