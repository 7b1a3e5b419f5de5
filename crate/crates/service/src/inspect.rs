use std::fmt::Write as _;

use fieldwork_core::tileset::{load_content, select_max_detail, Refine, Resolver, TilesetError};
use fieldwork_core::Parallelism;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TilesetReport {
    pub uri: String,
    pub asset_version: String,
    pub nodes: usize,
    pub depth: usize,
    pub nodes_per_level: Vec<usize>,
    pub content_tiles: usize,
    pub add_tiles: usize,
    pub external_documents: usize,
    pub selected_tiles: usize,
    pub meshes: usize,
    pub triangles: usize,
    pub vertices: usize,
    pub dropped_degenerate: usize,
}

pub fn inspect(uri: &str, resolver: &dyn Resolver, mode: Parallelism) -> Result<TilesetReport, TilesetError> {
    let loaded = load_content(uri, resolver, mode)?;
    let tree = &loaded.tree;
    let mut per_level = Vec::new();
    fn walk(n: &fieldwork_core::tileset::TileNode, level: usize, out: &mut Vec<usize>) {
        if out.len() <= level {
            out.push(0);
        }
        out[level] += 1;
        for c in &n.children {
            walk(c, level + 1, out);
        }
    }
    walk(&tree.root, 0, &mut per_level);
    let nodes = tree.root.walk();
    let mut docs: Vec<&str> = nodes.iter().map(|n| n.document_uri.as_str()).collect();
    docs.sort_unstable();
    docs.dedup();
    Ok(TilesetReport {
        uri: uri.to_string(),
        asset_version: tree.asset_version.clone(),
        nodes: nodes.len(),
        depth: tree.depth(),
        nodes_per_level: per_level,
        content_tiles: nodes.iter().filter(|n| n.has_content()).count(),
        add_tiles: nodes.iter().filter(|n| n.refine == Refine::Add).count(),
        external_documents: docs.len() - 1,
        selected_tiles: select_max_detail(tree).len(),
        meshes: loaded.meshes.len(),
        triangles: loaded.meshes.iter().map(|m| m.triangle_count()).sum(),
        vertices: loaded.meshes.iter().map(|m| m.vertex_count()).sum(),
        dropped_degenerate: loaded.meshes.iter().map(|m| m.dropped_degenerate).sum(),
    })
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("{n} {word}")
    } else {
        format!("{n} {word}s")
    }
}

impl TilesetReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let levels: Vec<String> = self.nodes_per_level.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "tileset    {} (3D Tiles {})", self.uri, self.asset_version);
        let _ = writeln!(
            s,
            "tree       {}, depth {}, per level [{}]",
            plural(self.nodes, "node"),
            self.depth,
            levels.join(", ")
        );
        let _ = writeln!(
            s,
            "content    {} with content, {} ADD-refined, {} external",
            plural(self.content_tiles, "tile"),
            self.add_tiles,
            plural(self.external_documents, "document")
        );
        let _ = writeln!(s, "selected   {}", plural(self.selected_tiles, "tile"));
        let _ = writeln!(s, "triangles  {}", self.triangles);
        let _ = writeln!(s, "vertices   {}", self.vertices);
        if self.dropped_degenerate > 0 {
            let _ = writeln!(s, "dropped    {} degenerate", self.dropped_degenerate);
        }
        s
    }
}
