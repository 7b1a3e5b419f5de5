//! Binary glTF 2.0 container: a reader for the subset needed to extract
//! triangle geometry, and a small writer used for mesh delivery and fixtures.

use std::collections::BTreeMap;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use super::TilesetError;

pub const GLB_MAGIC: &[u8; 4] = b"glTF";
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;
const HEADER_LEN: usize = 12;

pub(crate) const COMPONENT_U8: u32 = 5121;
pub(crate) const COMPONENT_U16: u32 = 5123;
pub(crate) const COMPONENT_U32: u32 = 5125;
pub(crate) const COMPONENT_F32: u32 = 5126;
pub(crate) const MODE_TRIANGLES: u32 = 4;

fn malformed(msg: impl Into<String>) -> TilesetError {
    TilesetError::MalformedContent(msg.into())
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> Result<u32, TilesetError> {
    let end = at.checked_add(4).ok_or_else(|| malformed("offset overflow"))?;
    let b = bytes.get(at..end).ok_or_else(|| malformed(format!("truncated header at byte {at}")))?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// A parsed GLB: the glTF document and its optional BIN chunk.
#[derive(Debug)]
pub struct Glb<'a> {
    pub document: Document,
    pub bin: Option<&'a [u8]>,
}

impl<'a> Glb<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, TilesetError> {
        if bytes.len() < HEADER_LEN || &bytes[0..4] != GLB_MAGIC {
            return Err(malformed("missing glTF magic"));
        }
        let version = read_u32(bytes, 4)?;
        if version != 2 {
            return Err(malformed(format!("unsupported GLB version {version}")));
        }
        let total = read_u32(bytes, 8)? as usize;
        if total > bytes.len() || total < HEADER_LEN {
            return Err(malformed(format!("GLB length {total} does not fit buffer of {} bytes", bytes.len())));
        }
        let bytes = &bytes[..total];

        let mut json: Option<&[u8]> = None;
        let mut bin: Option<&[u8]> = None;
        let mut at = HEADER_LEN;
        while at < bytes.len() {
            let len = read_u32(bytes, at)? as usize;
            let kind = read_u32(bytes, at + 4)?;
            let start = at + 8;
            let end = start
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| malformed("chunk extends past end of GLB"))?;
            let data = &bytes[start..end];
            match kind {
                CHUNK_JSON if json.is_none() => json = Some(data),
                CHUNK_BIN if bin.is_none() => bin = Some(data),
                CHUNK_JSON | CHUNK_BIN => return Err(malformed("duplicate GLB chunk")),
                _ => {} // unknown chunks are skipped
            }
            at = end;
        }
        let json = json.ok_or_else(|| malformed("GLB has no JSON chunk"))?;
        let document: Document = serde_json::from_slice(json).map_err(|e| malformed(format!("glTF JSON: {e}")))?;
        Ok(Self { document, bin })
    }

    /// Bytes of each buffer in the document, in index order.
    pub fn buffers(&self) -> Result<Vec<std::borrow::Cow<'a, [u8]>>, TilesetError> {
        use std::borrow::Cow;
        let mut out = Vec::with_capacity(self.document.buffers.len());
        for (i, buffer) in self.document.buffers.iter().enumerate() {
            let data: Cow<'a, [u8]> = match &buffer.uri {
                None if i == 0 => {
                    Cow::Borrowed(self.bin.ok_or_else(|| malformed("buffer 0 refers to a missing BIN chunk"))?)
                }
                None => return Err(malformed(format!("buffer {i} has no uri"))),
                Some(uri) => Cow::Owned(decode_data_uri(uri)?),
            };
            if data.len() < buffer.byte_length {
                return Err(malformed(format!(
                    "buffer {i} declares {} bytes but holds {}",
                    buffer.byte_length,
                    data.len()
                )));
            }
            out.push(data);
        }
        Ok(out)
    }
}

fn decode_data_uri(uri: &str) -> Result<Vec<u8>, TilesetError> {
    let payload = uri
        .strip_prefix("data:")
        .and_then(|rest| rest.split_once(";base64,"))
        .map(|(_, data)| data)
        .ok_or_else(|| malformed("external glTF buffers are not supported"))?;
    base64::engine::general_purpose::STANDARD.decode(payload).map_err(|e| malformed(format!("bad base64 buffer: {e}")))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Document {
    #[serde(default)]
    pub scene: Option<usize>,
    #[serde(default)]
    pub scenes: Vec<Scene>,
    #[serde(default)]
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub meshes: Vec<Mesh>,
    #[serde(default)]
    pub accessors: Vec<Accessor>,
    #[serde(default)]
    pub buffer_views: Vec<BufferView>,
    #[serde(default)]
    pub buffers: Vec<Buffer>,
    #[serde(default)]
    pub materials: Vec<Material>,
    #[serde(default)]
    pub extensions_required: Vec<String>,
    #[serde(default)]
    pub extensions: Option<Value>,
}

impl Document {
    /// `CESIUM_RTC` center, if the document carries one.
    pub fn cesium_rtc(&self) -> Option<[f64; 3]> {
        let center = self.extensions.as_ref()?.get("CESIUM_RTC")?.get("center")?;
        serde_json::from_value(center.clone()).ok()
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Node {
    #[serde(default)]
    pub children: Vec<usize>,
    pub mesh: Option<usize>,
    pub matrix: Option<[f64; 16]>,
    pub translation: Option<[f64; 3]>,
    /// Unit quaternion, `[x, y, z, w]`.
    pub rotation: Option<[f64; 4]>,
    pub scale: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Mesh {
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Primitive {
    #[serde(default)]
    pub attributes: BTreeMap<String, usize>,
    pub indices: Option<usize>,
    pub mode: Option<u32>,
    pub material: Option<usize>,
    #[serde(default)]
    pub extensions: Option<Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Accessor {
    pub buffer_view: Option<usize>,
    #[serde(default)]
    pub byte_offset: usize,
    pub component_type: u32,
    #[serde(default)]
    pub normalized: bool,
    pub count: usize,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub sparse: Option<Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BufferView {
    pub buffer: usize,
    #[serde(default)]
    pub byte_offset: usize,
    pub byte_length: usize,
    pub byte_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Buffer {
    pub byte_length: usize,
    pub uri: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Material {
    #[serde(default)]
    pub pbr_metallic_roughness: Option<PbrMetallicRoughness>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PbrMetallicRoughness {
    pub base_color_factor: Option<[f32; 4]>,
}

fn component_size(component_type: u32) -> Option<usize> {
    match component_type {
        COMPONENT_U8 | 5120 => Some(1),
        COMPONENT_U16 | 5122 => Some(2),
        COMPONENT_U32 | COMPONENT_F32 => Some(4),
        _ => None,
    }
}

fn type_width(kind: &str) -> Option<usize> {
    match kind {
        "SCALAR" => Some(1),
        "VEC2" => Some(2),
        "VEC3" => Some(3),
        "VEC4" => Some(4),
        "MAT2" => Some(4),
        "MAT3" => Some(9),
        "MAT4" => Some(16),
        _ => None,
    }
}

/// A bounds-checked strided view over one accessor's elements.
pub(crate) struct AccessorView<'b> {
    data: &'b [u8],
    stride: usize,
    pub count: usize,
    pub width: usize,
    pub component_type: u32,
    pub normalized: bool,
}

impl<'b> AccessorView<'b> {
    pub fn new(doc: &Document, buffers: &'b [std::borrow::Cow<'_, [u8]>], index: usize) -> Result<Self, TilesetError> {
        let accessor = doc.accessors.get(index).ok_or_else(|| malformed(format!("accessor {index} does not exist")))?;
        if accessor.sparse.is_some() {
            return Err(malformed("sparse accessors are not supported"));
        }
        let csize = component_size(accessor.component_type)
            .ok_or_else(|| malformed(format!("unknown component type {}", accessor.component_type)))?;
        let width =
            type_width(&accessor.kind).ok_or_else(|| malformed(format!("unknown accessor type {}", accessor.kind)))?;
        let elem = csize * width;

        let view_index =
            accessor.buffer_view.ok_or_else(|| malformed(format!("accessor {index} has no buffer view")))?;
        let view = doc
            .buffer_views
            .get(view_index)
            .ok_or_else(|| malformed(format!("buffer view {view_index} does not exist")))?;
        let buffer =
            buffers.get(view.buffer).ok_or_else(|| malformed(format!("buffer {} does not exist", view.buffer)))?;
        let view_end = view
            .byte_offset
            .checked_add(view.byte_length)
            .filter(|&e| e <= buffer.len())
            .ok_or_else(|| malformed(format!("buffer view {view_index} exceeds its buffer")))?;
        let view_bytes = &buffer[view.byte_offset..view_end];

        let stride = view.byte_stride.unwrap_or(elem);
        if stride < elem {
            return Err(malformed(format!("byte stride {stride} smaller than element size {elem}")));
        }
        if accessor.count > 0 {
            let needed = (accessor.count - 1)
                .checked_mul(stride)
                .and_then(|n| n.checked_add(elem))
                .and_then(|n| n.checked_add(accessor.byte_offset))
                .ok_or_else(|| malformed("accessor size overflow"))?;
            if needed > view_bytes.len() {
                return Err(malformed(format!("accessor {index} needs {needed} bytes, view has {}", view_bytes.len())));
            }
        }
        let data = view_bytes.get(accessor.byte_offset..).unwrap_or(&[]);
        Ok(Self {
            data,
            stride,
            count: accessor.count,
            width,
            component_type: accessor.component_type,
            normalized: accessor.normalized,
        })
    }

    fn raw(&self, element: usize, component: usize) -> f64 {
        let csize = component_size(self.component_type).unwrap_or(4);
        let at = element * self.stride + component * csize;
        let b = &self.data[at..at + csize];
        match self.component_type {
            5120 => b[0] as i8 as f64,
            COMPONENT_U8 => b[0] as f64,
            5122 => i16::from_le_bytes([b[0], b[1]]) as f64,
            COMPONENT_U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            COMPONENT_U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            _ => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        }
    }

    /// Component value with glTF normalization applied to integer types.
    pub fn get(&self, element: usize, component: usize) -> f64 {
        let v = self.raw(element, component);
        if !self.normalized {
            return v;
        }
        match self.component_type {
            5120 => (v / 127.0).max(-1.0),
            COMPONENT_U8 => v / 255.0,
            5122 => (v / 32767.0).max(-1.0),
            COMPONENT_U16 => v / 65535.0,
            _ => v,
        }
    }

    pub fn index(&self, element: usize) -> u32 {
        let csize = component_size(self.component_type).unwrap_or(4);
        let at = element * self.stride;
        let b = &self.data[at..at + csize];
        match self.component_type {
            COMPONENT_U8 => b[0] as u32,
            COMPONENT_U16 => u16::from_le_bytes([b[0], b[1]]) as u32,
            _ => u32::from_le_bytes([b[0], b[1], b[2], b[3]]),
        }
    }
}

/// Width of the index buffer written by [`GlbWriter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexWidth {
    U16,
    #[default]
    U32,
}

/// One triangle primitive to be written.
#[derive(Debug, Clone, Default)]
pub struct PrimitiveData {
    pub positions: Vec<[f32; 3]>,
    pub indices: Vec<u32>,
    pub colors: Option<Vec<[f32; 4]>>,
    pub uvs: Option<Vec<[f32; 2]>>,
}

/// Builds a single-scene GLB with one node and mesh per primitive.
#[derive(Debug, Clone, Default)]
pub struct GlbWriter {
    pub index_width: IndexWidth,
    /// Interleave vertex attributes into one strided buffer view.
    pub interleaved: bool,
    /// Column-major node matrix applied to every primitive.
    pub node_matrix: Option<[f64; 16]>,
    pub cesium_rtc: Option<[f64; 3]>,
    pub extras: Option<Value>,
    pub base_color: Option<[f32; 4]>,
}

impl GlbWriter {
    pub fn write(&self, primitives: &[PrimitiveData]) -> Vec<u8> {
        let mut bin: Vec<u8> = Vec::new();
        let mut views: Vec<Value> = Vec::new();
        let mut accessors: Vec<Value> = Vec::new();
        let mut meshes: Vec<Value> = Vec::new();
        let mut nodes: Vec<Value> = Vec::new();

        let mut push_view = |bin: &mut Vec<u8>, bytes: &[u8], stride: Option<usize>| -> usize {
            while !bin.len().is_multiple_of(4) {
                bin.push(0);
            }
            let mut view = json!({ "buffer": 0, "byteOffset": bin.len(), "byteLength": bytes.len() });
            if let Some(s) = stride {
                view["byteStride"] = json!(s);
            }
            bin.extend_from_slice(bytes);
            views.push(view);
            views.len() - 1
        };

        for prim in primitives {
            let n = prim.positions.len();
            let mut attrs = serde_json::Map::new();
            let (mut min, mut max) = ([f32::INFINITY; 3], [f32::NEG_INFINITY; 3]);
            for p in &prim.positions {
                for k in 0..3 {
                    min[k] = min[k].min(p[k]);
                    max[k] = max[k].max(p[k]);
                }
            }
            if n == 0 {
                min = [0.0; 3];
                max = [0.0; 3];
            }

            // attribute layout: (name, type, floats per vertex)
            let mut layout: Vec<(&str, &str, usize)> = vec![("POSITION", "VEC3", 3)];
            if prim.colors.is_some() {
                layout.push(("COLOR_0", "VEC4", 4));
            }
            if prim.uvs.is_some() {
                layout.push(("TEXCOORD_0", "VEC2", 2));
            }
            let vertex_floats = |i: usize, name: &str| -> Vec<f32> {
                match name {
                    "POSITION" => prim.positions[i].to_vec(),
                    "COLOR_0" => prim.colors.as_ref().map_or(vec![0.0; 4], |c| c[i].to_vec()),
                    _ => prim.uvs.as_ref().map_or(vec![0.0; 2], |c| c[i].to_vec()),
                }
            };

            if self.interleaved {
                let stride: usize = layout.iter().map(|l| l.2 * 4).sum();
                let mut bytes = Vec::with_capacity(stride * n);
                for i in 0..n {
                    for (name, _, _) in &layout {
                        for f in vertex_floats(i, name) {
                            bytes.extend_from_slice(&f.to_le_bytes());
                        }
                    }
                }
                let view = push_view(&mut bin, &bytes, Some(stride));
                let mut offset = 0;
                for (name, kind, w) in &layout {
                    let mut acc = json!({
                        "bufferView": view, "byteOffset": offset,
                        "componentType": COMPONENT_F32, "count": n, "type": kind
                    });
                    if *name == "POSITION" {
                        acc["min"] = json!(min);
                        acc["max"] = json!(max);
                    }
                    accessors.push(acc);
                    attrs.insert((*name).to_string(), json!(accessors.len() - 1));
                    offset += w * 4;
                }
            } else {
                for (name, kind, _) in &layout {
                    let mut bytes = Vec::new();
                    for i in 0..n {
                        for f in vertex_floats(i, name) {
                            bytes.extend_from_slice(&f.to_le_bytes());
                        }
                    }
                    let view = push_view(&mut bin, &bytes, None);
                    let mut acc = json!({
                        "bufferView": view, "componentType": COMPONENT_F32,
                        "count": n, "type": kind
                    });
                    if *name == "POSITION" {
                        acc["min"] = json!(min);
                        acc["max"] = json!(max);
                    }
                    accessors.push(acc);
                    attrs.insert((*name).to_string(), json!(accessors.len() - 1));
                }
            }

            let (index_bytes, ctype) = match self.index_width {
                IndexWidth::U16 => {
                    (prim.indices.iter().flat_map(|&i| (i as u16).to_le_bytes()).collect::<Vec<u8>>(), COMPONENT_U16)
                }
                IndexWidth::U32 => (prim.indices.iter().flat_map(|&i| i.to_le_bytes()).collect(), COMPONENT_U32),
            };
            let view = push_view(&mut bin, &index_bytes, None);
            accessors.push(json!({
                "bufferView": view, "componentType": ctype,
                "count": prim.indices.len(), "type": "SCALAR"
            }));
            let mut primitive = json!({
                "attributes": attrs, "indices": accessors.len() - 1, "mode": MODE_TRIANGLES
            });
            if self.base_color.is_some() {
                primitive["material"] = json!(0);
            }
            meshes.push(json!({ "primitives": [primitive] }));
            let mut node = json!({ "mesh": meshes.len() - 1 });
            if let Some(m) = self.node_matrix {
                node["matrix"] = json!(m);
            }
            nodes.push(node);
        }
        while !bin.len().is_multiple_of(4) {
            bin.push(0);
        }

        let mut doc = json!({
            "asset": { "version": "2.0", "generator": "fieldwork" },
            "scene": 0,
            "scenes": [{ "nodes": (0..nodes.len()).collect::<Vec<_>>() }],
            "nodes": nodes,
            "meshes": meshes,
            "accessors": accessors,
            "bufferViews": views,
            "buffers": [{ "byteLength": bin.len() }],
        });
        if let Some(color) = self.base_color {
            doc["materials"] = json!([{ "pbrMetallicRoughness": { "baseColorFactor": color } }]);
        }
        if let Some(center) = self.cesium_rtc {
            doc["extensionsUsed"] = json!(["CESIUM_RTC"]);
            doc["extensions"] = json!({ "CESIUM_RTC": { "center": center } });
        }
        if let Some(extras) = &self.extras {
            doc["extras"] = extras.clone();
        }
        assemble_glb(&serde_json::to_vec(&doc).expect("glTF JSON"), &bin)
    }
}

/// Packs a JSON chunk and a BIN chunk into a GLB container.
pub fn assemble_glb(json: &[u8], bin: &[u8]) -> Vec<u8> {
    let mut json = json.to_vec();
    while !json.len().is_multiple_of(4) {
        json.push(b' ');
    }
    let mut bin = bin.to_vec();
    while !bin.len().is_multiple_of(4) {
        bin.push(0);
    }
    let total = HEADER_LEN + 8 + json.len() + if bin.is_empty() { 0 } else { 8 + bin.len() };
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(GLB_MAGIC);
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&CHUNK_JSON.to_le_bytes());
    out.extend_from_slice(&json);
    if !bin.is_empty() {
        out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
        out.extend_from_slice(&CHUNK_BIN.to_le_bytes());
        out.extend_from_slice(&bin);
    }
    out
}
