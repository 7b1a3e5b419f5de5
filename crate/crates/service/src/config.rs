//! Key-value config for `fieldwork serve`.
//!
//! One `key = value` (or `key: value`) per line, so the same file reads as
//! TOML or INI. `#` and `;` start comments, `[section]` headers are
//! ignored, values may be quoted, and `tilesets` may be a one-line array.
//!
//! ```text
//! port = 8080
//! bind = "127.0.0.1"
//! multi_session = false
//! tileset = data/crater/tileset.json
//! tilesets = ["a/tileset.json", "b/tileset.json"]
//! ```

use std::path::Path;

pub const PORT_ENV: &str = "FIELDWORK_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub port: Option<u16>,
    pub bind: Option<String>,
    pub multi_session: Option<bool>,
    pub tilesets: Vec<String>,
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    for q in ['"', '\''] {
        if let Some(inner) = v.strip_prefix(q).and_then(|s| s.strip_suffix(q)) {
            return inner;
        }
    }
    v
}

/// Drops a trailing comment that is not inside quotes.
fn strip_comment(line: &str) -> &str {
    let mut quote = None;
    for (i, c) in line.char_indices() {
        match (quote, c) {
            (None, '"' | '\'') => quote = Some(c),
            (Some(q), c) if c == q => quote = None,
            (None, '#' | ';') => return &line[..i],
            _ => {}
        }
    }
    line
}

pub fn parse_config(text: &str) -> Result<FileConfig, String> {
    let mut cfg = FileConfig::default();
    for (no, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let at = |msg: String| format!("line {}: {msg}", no + 1);
        let split = line.find(['=', ':']).ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
        let key = line[..split].trim().to_ascii_lowercase().replace('-', "_");
        let value = line[split + 1..].trim();
        match key.as_str() {
            "port" => cfg.port = Some(unquote(value).parse().map_err(|e| at(format!("port: {e}")))?),
            "bind" | "host" => cfg.bind = Some(unquote(value).to_string()),
            "multi_session" => {
                cfg.multi_session = Some(match unquote(value).to_ascii_lowercase().as_str() {
                    "true" | "yes" | "on" | "1" => true,
                    "false" | "no" | "off" | "0" => false,
                    other => return Err(at(format!("multi_session: not a boolean: {other:?}"))),
                })
            }
            "tileset" | "tilesets" => {
                if let Some(list) = value.strip_prefix('[').and_then(|v| v.strip_suffix(']')) {
                    cfg.tilesets.extend(list.split(',').map(unquote).filter(|s| !s.is_empty()).map(str::to_string));
                } else {
                    cfg.tilesets.push(unquote(value).to_string());
                }
            }
            other => return Err(at(format!("unknown key {other:?}"))),
        }
    }
    Ok(cfg)
}

/// Reads a config file; relative tileset paths resolve against its folder.
pub fn load_config(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for t in &mut cfg.tilesets {
        if !t.contains("://") && Path::new(t.as_str()).is_relative() {
            *t = base.join(&*t).to_string_lossy().into_owned();
        }
    }
    Ok(cfg)
}

/// Command line, then `FIELDWORK_PORT`, then the config file, then 8080.
pub fn resolve_port(cli: Option<u16>, env: Option<&str>, file: Option<u16>) -> Result<u16, String> {
    if let Some(p) = cli {
        return Ok(p);
    }
    if let Some(e) = env.filter(|e| !e.trim().is_empty()) {
        return e.trim().parse().map_err(|err| format!("{PORT_ENV}={e:?}: {err}"));
    }
    Ok(file.unwrap_or(DEFAULT_PORT))
}
