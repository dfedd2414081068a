//! `rowsense` command line: scene generation, template building,
//! localization and the evaluation studies.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rowsense::config::KvConfig;
use rowsense::geometry::io::write_cloud;
use rowsense::geometry::{Frame, PointCloud, Pose6D};
use rowsense::harness::{self, EvalFrame, ExperimentConfig, Localizer, Method, Report, RunOutput, FRAME_CSV_HEADER};
use rowsense::synth::{read_dataset, write_dataset};
use rowsense::{load_template, save_template, Error, Result};

#[derive(Parser)]
#[command(name = "rowsense", version, about = "Row-centerline localization from 3D point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Restrict to one method (template-uniform, template-pf, baseline1,
    /// baseline2, baseline2-refined).
    #[arg(long)]
    method: Option<Method>,
    /// Scene preset: vineyard, wall, apricot, blob.
    #[arg(long)]
    preset: Option<String>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the evaluation trajectory of a synthetic scene to a frame directory.
    GenScene(Common),
    /// Build a template from a frame directory with truth, or from a synthetic row.
    BuildTemplate {
        #[command(flatten)]
        common: Common,
        /// Directory of `.pc3d` frames with `truth.csv`.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Localize every frame of a directory.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        frames: PathBuf,
    },
    /// Accuracy on a synthetic row, optionally repeated without the cutoff box.
    EvalAccuracy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ablate_cutoff: bool,
    },
    /// Cross-row template matrix.
    EvalCross(Common),
    /// Unit-tree gap sweep.
    EvalGaps(Common),
    /// Row-end truncation sweep.
    EvalRowend(Common),
    /// Curved-row sweep.
    EvalCurvature(Common),
    /// Voxel-size sweep.
    EvalVoxel(Common),
    /// Template-size sweep.
    EvalTemplateSize(Common),
    /// All methods on a wide sinusoid, split by heading.
    EvalCompare(Common),
    /// Line following with the P-controller.
    ClosedLoop(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenScene(_) => "gen-scene",
            Command::BuildTemplate { .. } => "build-template",
            Command::Localize { .. } => "localize",
            Command::EvalAccuracy { .. } => "eval-accuracy",
            Command::EvalCross(_) => "eval-cross",
            Command::EvalGaps(_) => "eval-gaps",
            Command::EvalRowend(_) => "eval-rowend",
            Command::EvalCurvature(_) => "eval-curvature",
            Command::EvalVoxel(_) => "eval-voxel",
            Command::EvalTemplateSize(_) => "eval-template-size",
            Command::EvalCompare(_) => "eval-compare",
            Command::ClosedLoop(_) => "closed-loop",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenScene(c)
            | Command::EvalCross(c)
            | Command::EvalGaps(c)
            | Command::EvalRowend(c)
            | Command::EvalCurvature(c)
            | Command::EvalVoxel(c)
            | Command::EvalTemplateSize(c)
            | Command::EvalCompare(c)
            | Command::ClosedLoop(c) => c,
            Command::BuildTemplate { common, .. } | Command::Localize { common, .. } | Command::EvalAccuracy { common, .. } => common,
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut kv = match &c.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--set expects KEY=VALUE, got '{s}'")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(p) = &c.preset {
        kv.set("scene.preset", p);
    }
    if let Some(s) = c.seed {
        kv.set("seed", s);
    }
    let mut cfg = ExperimentConfig::from_kv(&kv)?;
    if let Some(m) = c.method {
        cfg.methods = vec![m];
    }
    Ok(cfg)
}

fn finish(out: &mut RunOutput, command: &str, cfg: &ExperimentConfig, report: &dyn Report) -> Result<()> {
    report.write(out)?;
    let summary = report.summary()?;
    out.write_manifest(command, cfg, summary)
}

fn gen_scene(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<serde_json::Value> {
    let setup = harness::Setup::new(cfg)?;
    let frames = setup.eval_frames(cfg, &cfg.sensor);
    let clouds: Vec<PointCloud> = frames.iter().map(|f| f.cloud.clone()).collect();
    let poses: Vec<Pose6D> = frames.iter().map(|f| f.pose).collect();
    write_dataset(&out.dir().join("frames"), &clouds, &poses)?;
    let scene = PointCloud::new(setup.eval_scene.points.clone(), Frame::Row);
    write_cloud(&out.dir().join("scene.pc3d"), &scene)?;
    Ok(json!({ "frames": clouds.len(), "scene_points": scene.len(), "frame_dir": "frames", "scene": "scene.pc3d" }))
}

fn build(cfg: &ExperimentConfig, out: &mut RunOutput, frames: Option<&Path>) -> Result<serde_json::Value> {
    let template = match frames {
        Some(dir) => {
            let (clouds, truth) = read_dataset(dir)?;
            let truth = truth.ok_or_else(|| Error::EmptyInput(format!("{} has no truth.csv", dir.display())))?;
            let n = cfg.template_frames.min(clouds.len());
            harness::template_from_frames(cfg, &clouds[..n], &truth, &cfg.template)?
        }
        None => harness::Setup::new(cfg)?.template(cfg, &cfg.sensor, &cfg.template, cfg.template_frames)?,
    };
    save_template(&template, &out.dir().join("template.rstp"))?;
    Ok(json!({
        "template": "template.rstp",
        "dims": template.dims(),
        "resolution": template.resolution(),
        "frames": template.n_frames(),
        "no_info_frequency": template.no_info_frequency(),
        "bytes": template.encoded_len(),
    }))
}

fn localize(cfg: &ExperimentConfig, out: &mut RunOutput, template: Option<&Path>, dir: &Path) -> Result<serde_json::Value> {
    let (clouds, truth) = read_dataset(dir)?;
    let model = match template {
        Some(p) => Some(harness::model_for(cfg, &load_template(p)?)?),
        None if cfg.methods.iter().all(|m| !m.is_template()) => None,
        None => return Err(Error::InvalidParameter("template methods need --template".into())),
    };
    let frames: Vec<EvalFrame> = clouds
        .into_iter()
        .enumerate()
        .map(|(i, cloud)| EvalFrame {
            index: i,
            pose: truth.as_ref().map_or_else(Pose6D::default, |t| t[i]),
            cloud,
            tags: Vec::new(),
        })
        .collect();
    if cfg.methods.contains(&Method::TemplatePf) && truth.is_none() {
        return Err(Error::InvalidParameter("template-pf simulates odometry from truth.csv".into()));
    }
    let odo = harness::frame_odometry(cfg, &frames, "odometry")?;
    let loc = match &model {
        Some(m) => Localizer::new(cfg, m),
        None => Localizer::without_template(cfg),
    };
    let mut results = loc.run(&frames, &cfg.methods, odo.as_deref())?;
    if truth.is_none() {
        for r in &mut results {
            for rec in &mut r.records {
                rec.truth = None;
            }
        }
    }
    let mut csv = format!("{FRAME_CSV_HEADER}\n");
    for r in &results {
        for rec in &r.records {
            csv.push_str(&format!("{},{}\n", r.method, rec.csv_row()));
        }
    }
    out.write("estimates.csv", csv.as_bytes())?;
    let summary: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            let metrics = if truth.is_some() { serde_json::to_value(r.summary()?).ok() } else { None };
            Ok(json!({ "method": r.method, "frames": r.records.len(), "failures": r.failures, "metrics": metrics }))
        })
        .collect::<Result<_>>()?;
    Ok(json!({ "methods": summary }))
}

fn run(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    let mut cfg = load_config(common)?;
    let mut out = RunOutput::new(&common.out)?;
    let name = cmd.name();
    match cmd {
        Command::GenScene(_) => {
            let s = gen_scene(&cfg, &mut out)?;
            out.write_manifest(name, &cfg, s)
        }
        Command::BuildTemplate { frames, .. } => {
            let s = build(&cfg, &mut out, frames.as_deref())?;
            out.write_manifest(name, &cfg, s)
        }
        Command::Localize { template, frames, .. } => {
            let s = localize(&cfg, &mut out, template.as_deref(), frames)?;
            out.write_manifest(name, &cfg, s)
        }
        Command::EvalAccuracy { ablate_cutoff, .. } => {
            cfg.ablate_cutoff |= *ablate_cutoff;
            finish(&mut out, name, &cfg, &harness::run_accuracy(&cfg)?)
        }
        Command::EvalCross(_) => finish(&mut out, name, &cfg, &harness::run_cross_template_matrix(&cfg)?),
        Command::EvalGaps(_) => finish(&mut out, name, &cfg, &harness::run_gap_sweep(&cfg)?),
        Command::EvalRowend(_) => finish(&mut out, name, &cfg, &harness::run_rowend_sweep(&cfg)?),
        Command::EvalCurvature(_) => finish(&mut out, name, &cfg, &harness::run_curvature_sweep(&cfg)?),
        Command::EvalVoxel(_) => finish(&mut out, name, &cfg, &harness::run_voxel_sweep(&cfg)?),
        Command::EvalTemplateSize(_) => finish(&mut out, name, &cfg, &harness::run_template_size_sweep(&cfg)?),
        Command::EvalCompare(_) => finish(&mut out, name, &cfg, &harness::run_compare(&cfg)?),
        Command::ClosedLoop(_) => finish(&mut out, name, &cfg, &harness::closed_loop_sim(&cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
