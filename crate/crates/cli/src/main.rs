use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use medseg_client::{script, Client};
use medseg_core::mesh::{context_surface, mask_mesh, obj::write_obj};
use medseg_core::metrics::{composite_scores, read_trials, write_report};
use medseg_core::phantom;
use medseg_core::retrieval::{persist, BuiltinEmbedder, ReferenceIndex};
use medseg_core::segmenter::external::ExternalBackend;
use medseg_core::segmenter::{ProfileSet, RegionGrowBackend, SegmentationBackend};
use medseg_core::session::SessionContext;
use medseg_core::volume::{load_mask, load_volume, save_mask, save_volume};
use medseg_server::{AppState, Roles, HttpGuidanceProvider, WsTransport};

#[derive(Parser)]
#[command(name = "medseg", version, about = "Interactive 3D lesion segmentation service and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the session service.
    Serve {
        #[arg(long, env = "MEDSEG_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "MEDSEG_PORT", default_value_t = 8080)]
        port: u16,
        /// Directory of web client assets served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Which half of the service this instance runs.
        #[arg(long, value_enum, default_value = "all")]
        role: Role,
        #[command(flatten)]
        service: ServiceArgs,
    },
    /// Run a session script against a service.
    Segment {
        #[arg(long)]
        script: PathBuf,
        /// WebSocket URL of a running service; without it an in-process
        /// service is started.
        #[arg(long)]
        url: Option<String>,
        #[command(flatten)]
        service: ServiceArgs,
    },
    /// Reference index maintenance.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Extract a lesion surface from a saved mask.
    Mesh {
        #[arg(long)]
        mask: PathBuf,
        /// Volume supplying voxel spacing and, with a threshold, the context surface.
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        context_threshold: Option<f32>,
        /// Defaults to `<out stem>_context.obj`.
        #[arg(long)]
        context_out: Option<PathBuf>,
    },
    /// Composite scores from a trials CSV.
    Eval {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic demo case, reference volumes, labels and profiles.
    Phantom {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    All,
    Segmentation,
    Rendering,
}

impl From<Role> for Roles {
    fn from(r: Role) -> Self {
        Roles {
            segmentation: !matches!(r, Role::Rendering),
            rendering: !matches!(r, Role::Segmentation),
        }
    }
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        volumes: PathBuf,
        /// CSV with header `volume,slice_index,has_pathology[,patient_id]`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct ServiceArgs {
    #[arg(long, env = "MEDSEG_DATA_DIR", default_value = "medseg-data")]
    data_dir: PathBuf,
    /// Target profiles (TOML). Defaults to the built-in demo profiles.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Reference index directory, optionally prefixed `MODALITY=`
    /// (default modality `mr`). Repeatable.
    #[arg(long = "index", value_name = "[MODALITY=]PATH")]
    indexes: Vec<String>,
    /// HTTP endpoint of an external guidance text generator.
    #[arg(long)]
    guidance_endpoint: Option<String>,
    /// WebSocket endpoint of an external segmentation backend.
    #[arg(long)]
    backend_endpoint: Option<String>,
    /// Timeout for external guidance and backend calls.
    #[arg(long, default_value_t = 30)]
    external_timeout_secs: u64,
}

fn split_index_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((m, p)) if !m.is_empty() && !m.contains(['/', '\\']) => (m.to_ascii_lowercase(), PathBuf::from(p)),
        _ => ("mr".to_string(), PathBuf::from(arg)),
    }
}

impl ServiceArgs {
    fn build_context(&self) -> Result<SessionContext> {
        let profiles = match &self.profiles {
            Some(p) => ProfileSet::load(p)?,
            None => {
                tracing::warn!("no --profiles given, using built-in demo profiles");
                phantom::tumor_profiles()
            }
        };
        let timeout = Duration::from_secs(self.external_timeout_secs);
        let backend: Arc<dyn SegmentationBackend> = match &self.backend_endpoint {
            Some(url) => Arc::new(ExternalBackend::new(WsTransport::new(url.clone(), timeout), url.clone(), false)),
            None => Arc::new(RegionGrowBackend),
        };
        std::fs::create_dir_all(&self.data_dir)
            .with_context(|| format!("creating {}", self.data_dir.display()))?;
        let mut ctx = SessionContext::new(profiles, backend, Arc::new(BuiltinEmbedder), &self.data_dir);
        for arg in &self.indexes {
            let (modality, path) = split_index_arg(arg);
            let index = persist::load(&path).with_context(|| format!("loading index {}", path.display()))?;
            tracing::info!(modality, records = index.len(), "reference index loaded");
            ctx = ctx.with_index(&modality, Arc::new(index));
        }
        if let Some(url) = &self.guidance_endpoint {
            ctx = ctx.with_guidance(Arc::new(HttpGuidanceProvider::new(url.clone(), timeout)));
        }
        Ok(ctx)
    }
}

async fn run_script(path: &Path, url: Option<String>, service: &ServiceArgs) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lines = script::parse(&text)?;
    let url = match url {
        Some(u) => u,
        None => {
            let state = AppState::new(Arc::new(service.build_context()?), None);
            let (addr, _task) = medseg_server::spawn(SocketAddr::from(([127, 0, 0, 1], 0)), state).await?;
            format!("ws://{addr}/ws")
        }
    };
    let mut client = Client::connect(&url).await?;
    let result = script::run(&mut client, &lines, |o| println!("{}", o.summary())).await;
    if let Some(id) = client.session_id() {
        eprintln!("session {id}");
    }
    result?;
    Ok(())
}

fn write_phantom(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out.join("refs"))?;
    let demo = phantom::demo_head();
    save_volume(&demo.volume.clone().with_source_id("demo"), &out.join("head.nii.gz"))?;
    save_mask(&demo.truth, demo.volume.spacing(), &out.join("head_truth.nii.gz"))?;

    let mut labels = String::from("volume,slice_index,has_pathology,patient_id\n");
    let cases = [
        ("ref-a", [20.0, 24.0, 14.0], 5.0),
        ("ref-b", [28.0, 20.0, 24.0], 7.0),
        ("ref-c", [22.0, 28.0, 18.0], 4.0),
    ];
    for (patient, center, radius) in cases {
        let case = phantom::tumor_head([48, 48, 40], [0.5, 0.5, 1.0], center, radius);
        let file = format!("{patient}.nii.gz");
        save_volume(&case.volume, &out.join("refs").join(&file))?;
        for z in (2..38).step_by(3) {
            let lesion = z >= case.tumor_slices.0 && z <= case.tumor_slices.1;
            labels.push_str(&format!("{file},{z},{},{patient}\n", u8::from(lesion)));
        }
    }
    std::fs::write(out.join("labels.csv"), labels)?;
    let profiles = phantom::tumor_profiles();
    std::fs::write(out.join("profiles.toml"), toml::to_string(&profiles)?)?;

    let head = out.join("head.nii.gz");
    let script = format!(
        "open {} modality=mr target=tumor\n\
         command segment the tumor\n\
         confirm\n\
         prompt + 26 22\n\
         refine\n\
         propagate\n\
         complete\n\
         complete confirm\n\
         mesh context=300\n",
        head.canonicalize().unwrap_or(head.clone()).display()
    );
    std::fs::write(out.join("demo.script"), script)?;
    println!("wrote demo case, {} reference volumes, labels.csv, profiles.toml and demo.script to {}", cases.len(), out.display());
    Ok(())
}

fn mesh_command(mask: &Path, volume: &Path, out: &Path, threshold: Option<f32>, context_out: Option<PathBuf>) -> Result<()> {
    let mask = load_mask(mask)?;
    let volume = load_volume(volume)?;
    if mask.dims() != volume.dims() {
        bail!("mask {:?} and volume {:?} differ in size", mask.dims(), volume.dims());
    }
    let name = if mask.target_name.is_empty() { "lesion" } else { mask.target_name.as_str() };
    let mesh = mask_mesh(&mask, volume.spacing(), name)?;
    write_obj(&mesh, out)?;
    println!("{}: {} vertices, {} triangles, {:.3} mm^3", out.display(), mesh.vertices.len(), mesh.triangles.len(), mesh.signed_volume());
    if let Some(t) = threshold {
        let path = context_out.unwrap_or_else(|| {
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
            out.with_file_name(format!("{stem}_context.obj"))
        });
        let ctx = context_surface(&volume, t)?;
        write_obj(&ctx, &path)?;
        println!("{}: {} vertices, {} triangles", path.display(), ctx.vertices.len(), ctx.triangles.len());
    }
    Ok(())
}

fn eval_command(trials: &Path, out: Option<PathBuf>) -> Result<()> {
    let file = std::fs::File::open(trials).with_context(|| format!("opening {}", trials.display()))?;
    let report = composite_scores(&read_trials(file)?)?;
    match out {
        Some(p) => write_report(std::fs::File::create(&p)?, &report)?,
        None => write_report(std::io::stdout().lock(), &report)?,
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Serve { host, port, static_dir, role, service } => {
            let state = AppState::with_roles(Arc::new(service.build_context()?), static_dir, role.into());
            let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
            tracing::info!("listening on {}", listener.local_addr()?);
            medseg_server::serve(listener, state).await?;
        }
        Command::Segment { script, url, service } => run_script(&script, url, &service).await?,
        Command::Index { command: IndexCommand::Build { volumes, labels, out } } => {
            let index: ReferenceIndex =
                tokio::task::spawn_blocking(move || persist::build_from_labels(&volumes, &labels, &BuiltinEmbedder))
                    .await??;
            persist::save(&index, &out)?;
            let (pos, neg) = index.label_counts();
            println!("{}: {} records ({pos} with lesion, {neg} without)", out.display(), index.len());
        }
        Command::Mesh { mask, volume, out, context_threshold, context_out } => {
            mesh_command(&mask, &volume, &out, context_threshold, context_out)?
        }
        Command::Eval { trials, out } => eval_command(&trials, out)?,
        Command::Phantom { out } => write_phantom(&out)?,
    }
    Ok(())
}
