//! `femseg` command line. Exit codes: 0 success, 1 user error, 2 internal error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use femseg_core::dicom::{read_series_dir, CtVolume, DicomError};
use femseg_core::evaluation::{read_votes_csv, tally_survey, TallyReport};
use femseg_core::femur::{delineate_femur, overlay_contour, FemurError, FemurParams, SideSelection, OVERLAY_WINDOW};
use femseg_core::image::{Kind, SOFT_TISSUE_WINDOW};
use femseg_core::phantom::PhantomSpec;
use femseg_core::pipeline::{parse_pipeline_spec, run_pipeline, Cache, DEFAULT_BUDGET};

use crate::api::display_slice;
use crate::export::{compare_sets, DelineationSet, EvalReport};
use crate::store::Store;

#[derive(Debug, Parser)]
#[command(name = "femseg", version, about = "Femoral-head delineation and image pipelines for pelvic CT")]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Left,
    Right,
    Both,
}

impl From<SideArg> for SideSelection {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Left => SideSelection::Left,
            SideArg::Right => SideSelection::Right,
            SideArg::Both => SideSelection::Both,
        }
    }
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (w, l) = s.split_once(',').ok_or("expected WIDTH,LEVEL")?;
    let w: f64 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let l: f64 = l.trim().parse().map_err(|e| format!("level: {e}"))?;
    if !(w > 0.0) {
        return Err("width must be > 0".into());
    }
    Ok((w, l))
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Parse a DICOM series directory and summarize it.
    Ingest { dir: PathBuf },
    /// Run a pipeline spec on one slice.
    Run {
        spec: PathBuf,
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        slice: usize,
        /// Write the record and one PNG per stage here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run on the windowed 8-bit slice instead of HU, e.g. `400,40`.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
    },
    /// Delineate the femoral head(s) of a series.
    Delineate {
        dir: PathBuf,
        /// Overrides the side in --params.
        #[arg(long, value_enum)]
        side: Option<SideArg>,
        /// JSON file with delineation parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = "delineation.json")]
        out: PathBuf,
        /// Also write contour overlays (one PNG per contoured slice) here.
        #[arg(long)]
        overlays: Option<PathBuf>,
    },
    /// Score a delineation against a reference.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Percentages per survey group from a votes CSV.
    Tally { votes: PathBuf },
    /// Write the synthetic hip phantom as a DICOM series plus ground truth.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        /// JSON overrides for the phantom geometry.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Session store and pipeline cache directory.
        #[arg(long, default_value = "femseg-store")]
        store: PathBuf,
        /// Cache budget in MiB.
        #[arg(long, default_value_t = DEFAULT_BUDGET >> 20)]
        cache_mib: u64,
    },
}

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<DicomError> for CliError {
    fn from(e: DicomError) -> Self {
        CliError::User(format!("{}: {e}", e.name()))
    }
}

impl From<FemurError> for CliError {
    fn from(e: FemurError) -> Self {
        CliError::User(format!("{}: {e}", e.name()))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn emit(json_mode: bool, value: &impl Serialize, human: impl FnOnce() -> String) {
    let text = if json_mode {
        serde_json::to_string_pretty(value).expect("output serializes")
    } else {
        human()
    };
    // a closed pipe (`| head`) is not an error worth a panic
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load(dir: &Path) -> Result<CtVolume, CliError> {
    if !dir.is_dir() {
        return Err(CliError::User(format!("{}: not a directory", dir.display())));
    }
    Ok(read_series_dir(dir)?)
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(&cli);
    let json_mode = cli.json;
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            if json_mode {
                println!("{}", json!({ "v": 1, "error": e.message(), "exit": e.code() }));
            }
            e.code()
        }
    }
}

fn init_logging(cli: &Cli) {
    let default = match (cli.verbose, &cli.cmd) {
        (0, Cmd::Serve { .. }) => "info",
        (0, _) => "warn",
        (1, _) => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("FEMSEG_LOG").unwrap_or_else(|_| default.into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let j = cli.json;
    match cli.cmd {
        Cmd::Ingest { dir } => {
            let v = load(&dir)?;
            let (w, h) = v.dims();
            let (r, c) = v.pixel_spacing();
            let summary = json!({
                "v": 1,
                "slices": v.len(),
                "dims": [w, h],
                "pixel_spacing": [r, c],
                "z_range": [v.z(0), v.z(v.len() - 1)],
                "volume_digest": v.digest(),
            });
            emit(j, &summary, || {
                format!(
                    "{} slices of {w}x{h}, spacing {r}x{c} mm, z {}..{} mm\ndigest {}",
                    v.len(),
                    v.z(0),
                    v.z(v.len() - 1),
                    v.digest()
                )
            });
        }
        Cmd::Run {
            spec,
            dir,
            slice,
            out,
            window,
        } => {
            let spec = parse_pipeline_spec(&read(&spec)?)
                .map_err(|e| CliError::User(format!("{}: {e}", e.name())))?;
            let v = load(&dir)?;
            if slice >= v.len() {
                return Err(CliError::User(format!("slice {slice} out of range (series has {})", v.len())));
            }
            let input = match window {
                None => v.hu(slice).clone(),
                Some((w, l)) => display_slice(v.hu(slice), w, l).map_err(|e| CliError::User(e.to_string()))?,
            };
            let cache = Cache::memory(DEFAULT_BUDGET);
            let (record, intermediates, failure) = match run_pipeline(&spec, &input, &cache) {
                Ok(o) => (o.record, o.intermediates, None),
                Err(f) => (f.record, f.intermediates, Some(f.error)),
            };
            if let Some(dir) = &out {
                mkdir(dir)?;
                for (st, img) in record.stages.iter().zip(&intermediates) {
                    let png = if img.kind() == Kind::Hu {
                        let (w, l) = SOFT_TISSUE_WINDOW;
                        img.window_level(w, l).expect("positive width").to_png()
                    } else {
                        img.to_png()
                    };
                    write(&dir.join(format!("stage_{:02}_{}.png", st.index, st.op)), &png)?;
                }
                write(&dir.join("record.json"), serde_json::to_string_pretty(&record).unwrap().as_bytes())?;
            }
            if let Some(e) = failure {
                return Err(CliError::User(format!("{}: {e}", e.name())));
            }
            emit(j, &json!({ "v": 1, "record": record }), || {
                let mut s = format!("input {}\n", record.input_digest);
                for st in &record.stages {
                    s += &format!("{:>3} {:<16} {} {:>8.2} ms\n", st.index, st.op, st.output_digest, st.wall_ms);
                }
                s + &format!("output {}", record.output_digest)
            });
        }
        Cmd::Delineate {
            dir,
            side,
            params,
            out,
            overlays,
        } => {
            let mut p: FemurParams = match &params {
                Some(path) => parse_json(path)?,
                None => FemurParams::default(),
            };
            if let Some(s) = side {
                p.side = s.into();
            }
            let v = load(&dir)?;
            let set = DelineationSet::new(delineate_femur(&v, &p)?);
            write(&out, set.to_json().as_bytes())?;
            if let Some(odir) = &overlays {
                mkdir(odir)?;
                for i in 0..v.len() {
                    let contours: Vec<_> = set
                        .delineations
                        .iter()
                        .filter_map(|d| d.slice(i).map(|s| s.contour()))
                        .collect();
                    if !contours.is_empty() {
                        let rgb = overlay_contour(v.hu(i), &contours, OVERLAY_WINDOW)?;
                        write(&odir.join(format!("overlay_{i:04}.png")), &rgb.to_png())?;
                    }
                }
            }
            let summary: Vec<_> = set
                .delineations
                .iter()
                .map(|d| json!({ "side": d.side, "range": d.range, "slices": d.slices.len() }))
                .collect();
            emit(j, &json!({ "v": 1, "out": out, "sides": summary }), || {
                let mut s = String::new();
                for d in &set.delineations {
                    let r = &d.range;
                    s += &format!(
                        "{}: slices {}..={} (lt_end {}, gt_end {}), {} contours\n",
                        d.side.name(),
                        r.start,
                        r.stop,
                        r.lt_end,
                        r.gt_end,
                        d.slices.len()
                    );
                }
                s + &format!("wrote {}", out.display())
            });
        }
        Cmd::Eval { pred, truth } => {
            let pred: DelineationSet = parse_json(&pred)?;
            let truth: DelineationSet = parse_json(&truth)?;
            let report: EvalReport = compare_sets(&pred, &truth).map_err(|e| CliError::User(e.to_string()))?;
            emit(j, &report, || {
                report
                    .sides
                    .iter()
                    .map(|s| {
                        format!(
                            "{}: dice {:.4}, jaccard {:.4}, hausdorff {:.2} mm, mean surface distance {:.2} mm",
                            s.side.name(),
                            s.dice,
                            s.jaccard,
                            s.hausdorff_mm,
                            s.mean_surface_distance_mm
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Cmd::Tally { votes } => {
            let file = fs::File::open(&votes).map_err(|e| CliError::User(format!("{}: {e}", votes.display())))?;
            let records = read_votes_csv(file).map_err(|e| CliError::User(format!("{}: {e}", e.name())))?;
            let report = tally_survey(&records).map_err(|e| CliError::User(format!("{}: {e}", e.name())))?;
            emit(j, &report, || render_tally(&report));
        }
        Cmd::Phantom { out, spec, seed } => {
            let mut s: PhantomSpec = match &spec {
                Some(path) => parse_json(path)?,
                None => PhantomSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            mkdir(&out)?;
            let truth = s.write_dir(&out).map_err(|e| CliError::Internal(format!("{}: {e}", out.display())))?;
            let volume = load(&out)?;
            let set = DelineationSet::new(s.truth_delineations(&volume));
            write(&out.join("truth_delineation.json"), set.to_json().as_bytes())?;
            emit(j, &json!({ "v": 1, "out": out, "slices": s.slices, "truth": truth }), || {
                format!(
                    "wrote {} slices of {}x{} to {} (ground truth in truth.json, truth_delineation.json)",
                    s.slices,
                    s.width,
                    s.height,
                    out.display()
                )
            });
        }
        Cmd::Serve {
            host,
            port,
            store,
            cache_mib,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::User(format!("{host}:{port}: {e}")))?;
            let store = Store::open_with_budget(&store, cache_mib << 20)
                .map_err(|e| CliError::Internal(format!("{}: {e}", store.display())))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
            rt.block_on(async move {
                let (local, handle) = crate::api::spawn(Arc::new(store), addr)
                    .await
                    .map_err(|e| CliError::User(format!("cannot listen on {addr}: {e}")))?;
                tracing::info!("listening on http://{local}");
                if j {
                    println!("{}", json!({ "v": 1, "listening": local.to_string() }));
                }
                tokio::select! {
                    _ = handle => Err(CliError::Internal("server stopped".into())),
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })?;
        }
    }
    Ok(())
}

fn render_tally(report: &TallyReport) -> String {
    let mut s = String::new();
    for g in &report.groups {
        let label = match (g.region, g.source) {
            (Some(r), _) => format!("survey one, {r:?}").to_lowercase(),
            (_, Some(src)) => format!("survey two, {src:?}").to_lowercase(),
            _ => "?".into(),
        };
        let cells: Vec<String> = g
            .percent
            .iter()
            .map(|(k, p)| format!("{k} {p:.1}% ({})", g.counts[k]))
            .collect();
        s += &format!("{label} (n={}): {}\n", g.total, cells.join(", "));
    }
    s.trim_end().to_string()
}
