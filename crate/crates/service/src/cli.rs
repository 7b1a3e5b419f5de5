use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use fieldwork_core::fixtures::{self, FixtureBundle};
use fieldwork_core::scene::SceneHandle;
use fieldwork_core::session::{export_document, Session};
use fieldwork_core::tileset::{load_content, FsResolver};
use fieldwork_core::Parallelism;

use crate::bench::{bench_raycast, rays_over, synthetic_terrain};
use crate::config::{load_config, resolve_port, FileConfig, PORT_ENV};
use crate::inspect::inspect;
use crate::script::{run_script, Script};
use crate::state::AppState;

#[derive(Debug, Parser)]
#[command(name = "fieldwork", version, about = "Virtual fieldwork measurement engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Apply a batch script of markers and measurements; prints the session
    /// document.
    Measure(MeasureArgs),
    /// Print tree statistics and triangle counts of a tileset.
    Inspect(InspectArgs),
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Write a generated test tileset to a folder.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Port to listen on [default: $FIELDWORK_PORT, config file, 8080].
    #[arg(long)]
    pub port: Option<u16>,
    /// Address to bind [default: 127.0.0.1].
    #[arg(long)]
    pub bind: Option<String>,
    /// Tileset to load at startup; repeatable.
    #[arg(long = "tileset", value_name = "URI")]
    pub tilesets: Vec<String>,
    /// Key-value config file with `port`, `bind`, `multi_session` and
    /// `tileset` entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Allow clients to open separate sessions under /sessions/{sid}.
    #[arg(long)]
    pub multi_session: bool,
    /// Build and decode on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long = "tileset", value_name = "URI", required = true)]
    pub tilesets: Vec<String>,
    /// Script file, or `-` for stdin.
    #[arg(long)]
    pub script: PathBuf,
    /// Write the session document here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub uri: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Time BVH construction and closest-hit raycasts.
    Raycast(BenchRaycastArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).multiple(false)))]
pub struct BenchRaycastArgs {
    #[arg(long, value_name = "URI", group = "source")]
    pub tileset: Option<String>,
    /// Generate a terrain of at least this many triangles instead.
    #[arg(long, value_name = "TRIANGLES", group = "source")]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub rays: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureName {
    Minimal,
    Replace,
    Add,
    B3dm,
    External,
    Crater,
    Flat,
}

impl FixtureName {
    pub fn bundle(self) -> FixtureBundle {
        let site = fixtures::default_site();
        match self {
            FixtureName::Minimal => fixtures::minimal_tileset(&site),
            FixtureName::Replace => fixtures::replace_two_level(&site),
            FixtureName::Add => fixtures::add_two_level(&site),
            FixtureName::B3dm => fixtures::b3dm_tileset(&site),
            FixtureName::External => fixtures::external_tileset(&site),
            FixtureName::Crater => fixtures::crater_tileset(),
            FixtureName::Flat => fixtures::flat_tileset(site),
        }
    }
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(value_enum)]
    pub name: FixtureName,
    #[arg(long)]
    pub out: PathBuf,
}

fn mode(sequential: bool) -> Parallelism {
    if sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    }
}

fn emit(out: &mut dyn Write, bytes: &[u8]) -> Result<(), String> {
    out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("reports serialize");
    b.push(b'\n');
    b
}

pub fn run_measure(args: &MeasureArgs, out: &mut dyn Write) -> Result<(), String> {
    let scene = SceneHandle::new();
    let mut session = Session::new();
    for uri in &args.tilesets {
        let id = scene.register_tileset(uri, &FsResolver).map_err(|e| format!("{uri}: {e} ({})", e.code()))?;
        session.add_tileset(id, uri.clone());
    }
    let text = if args.script.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| e.to_string())?;
        s
    } else {
        std::fs::read_to_string(&args.script).map_err(|e| format!("{}: {e}", args.script.display()))?
    };
    let script: Script = serde_json::from_str(&text).map_err(|e| format!("script: {e}"))?;
    let doc = run_script(&script, &scene.snapshot(), &mut session).map_err(|e| e.to_string())?;
    let bytes = export_document(&doc);
    match &args.out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| format!("{}: {e}", p.display())),
        None => emit(out, &bytes),
    }
}

pub fn run_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<(), String> {
    let r = inspect(&args.uri, &FsResolver, Parallelism::Parallel).map_err(|e| format!("{e} ({})", e.code()))?;
    if args.json {
        emit(out, &to_json(&r))
    } else {
        emit(out, r.to_text().as_bytes())
    }
}

pub fn run_bench(args: &BenchRaycastArgs, out: &mut dyn Write) -> Result<(), String> {
    let m = mode(args.sequential);
    let (source, meshes) = match (&args.tileset, args.synthetic) {
        (Some(uri), _) => {
            let loaded = load_content(uri, &FsResolver, m).map_err(|e| format!("{e} ({})", e.code()))?;
            (uri.clone(), loaded.meshes)
        }
        (None, Some(n)) => (format!("synthetic terrain, {n} triangles requested"), synthetic_terrain(n, m)),
        (None, None) => return Err("either --tileset or --synthetic is required".into()),
    };
    let meshes: Vec<_> = meshes.into_iter().map(Arc::new).collect();
    let rays = rays_over(&meshes, args.rays, args.seed).ok_or("the tileset has no geometry")?;
    let report = bench_raycast(&source, meshes, &rays, m).map_err(|e| format!("{e} ({})", e.code()))?;
    if args.json {
        emit(out, &to_json(&report))
    } else {
        emit(out, report.to_text().as_bytes())
    }
}

pub fn run_fixture(args: &FixtureArgs, out: &mut dyn Write) -> Result<(), String> {
    let root = args.name.bundle().write_to(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    emit(out, format!("{}\n", root.display()).as_bytes())
}

pub fn run_serve(args: &ServeArgs) -> Result<(), String> {
    let file = match &args.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let env = std::env::var(PORT_ENV).ok();
    let port = resolve_port(args.port, env.as_deref(), file.port)?;
    let bind = args.bind.clone().or(file.bind).unwrap_or_else(|| "127.0.0.1".into());
    let multi = args.multi_session || file.multi_session.unwrap_or(false);

    let state = Arc::new(AppState::new(
        Arc::new(SceneHandle::with_parallelism(mode(args.sequential))),
        Arc::new(FsResolver),
        multi,
    ));
    let session = state.default_session();
    for uri in file.tilesets.iter().chain(&args.tilesets) {
        let id = state.register_tileset(&session, uri).map_err(|e| format!("{uri}: {e}"))?;
        eprintln!("loaded tileset {id}: {uri}");
    }

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((bind.as_str(), port))
            .await
            .map_err(|e| format!("bind {bind}:{port}: {e}"))?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        // first stdout line; scripts and tests read the port from it
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        crate::serve(listener, state).await.map_err(|e| e.to_string())
    })
}

pub fn run(cli: Cli) -> Result<(), String> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Serve(a) => {
            drop(out);
            run_serve(&a)
        }
        Command::Measure(a) => run_measure(&a, &mut out),
        Command::Inspect(a) => run_inspect(&a, &mut out),
        Command::Bench(BenchCommand::Raycast(a)) => run_bench(&a, &mut out),
        Command::Fixture(a) => run_fixture(&a, &mut out),
    }
}

/// Entry point of the `fieldwork` binary; returns the exit code.
pub fn main() -> i32 {
    match run(Cli::parse()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
