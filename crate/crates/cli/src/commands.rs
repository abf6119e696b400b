use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cmr_phase::descriptor::{FocusPoint, FocusStrategy, MotionDescriptor};
use cmr_phase::evalqc::{evaluate_phases, summarize, QcVerdict};
use cmr_phase::imgvol::{load_volume4d, save_volume4d, PreprocessReport, Volume4D, VolumeFormat};
use cmr_phase::phantom::{analytic_field, generate_phantom, PhantomConfig, TruthRecord};
use cmr_phase::register::save_field;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self as art, DescriptorMeta, DescriptorTable, EvalRow, PhasesRecord, QcRecord};
use crate::config::{parse_coord, RunConfig, REPEAT_LEN};
use crate::error::{CliError, Kind, Result};
use crate::pipeline::{self, PhaseOutcome, Prepared};
use crate::plot::descriptor_svg;

#[derive(Debug, Parser)]
#[command(name = "cmrphase", version, about = "Key-frame detection in cine cardiac MRI from registration fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline: preprocess, register, descriptor, phases, QC, plot.
    Detect(DetectArgs),
    /// Register every frame onto its successor and write the fields.
    Register(RegisterArgs),
    /// Reduce stored fields to the motion descriptor.
    Descriptor(DescriptorArgs),
    /// Extract key frames from a descriptor CSV.
    Phases(PhasesArgs),
    /// Score predicted key frames against a reference.
    Eval(EvalArgs),
    /// Generate a synthetic beating-shell sequence with known key frames.
    Phantom(PhantomArgs),
    /// Cut-off check on a descriptor CSV.
    Qc(QcArgs),
}

/// Flags that override the JSON run config.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run config; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub ssim_window: Option<usize>,
    #[arg(long)]
    pub pyramid_levels: Option<usize>,
    #[arg(long)]
    pub iters_per_level: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    /// Isotropic resampling target, mm.
    #[arg(long)]
    pub target_spacing: Option<f64>,
    /// Keep the input grid.
    #[arg(long)]
    pub no_resample: bool,
    /// Repeat frames cyclically to 40 before registration.
    #[arg(long)]
    pub repeat_to_40: bool,
    #[arg(long)]
    pub clip_quantile: Option<f64>,
    #[arg(long)]
    pub mask_quantile: Option<f64>,
    /// Temporal Gaussian sigma, frames.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Average over all voxels instead of the magnitude mask.
    #[arg(long)]
    pub unmasked: bool,
    /// Focus point: vol, mse, lv or sept.
    #[arg(long)]
    pub focus: Option<FocusStrategy>,
    #[arg(long)]
    pub mse_quantile: Option<f64>,
    /// LV mask on the analysis grid (raw+json, shape [Z, Y, X]).
    #[arg(long, value_name = "FILE")]
    pub lv_mask: Option<PathBuf>,
    /// Anterior RV insertion point on the analysis grid.
    #[arg(long, value_name = "Z,Y,X", value_parser = parse_coord)]
    pub rvip_ant: Option<[f64; 3]>,
    /// Inferior RV insertion point on the analysis grid.
    #[arg(long, value_name = "Z,Y,X", value_parser = parse_coord)]
    pub rvip_inf: Option<[f64; 3]>,
    #[arg(long)]
    pub cutoff_threshold: Option<f64>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let r = &mut c.registration;
        set(&mut r.lambda, self.lambda);
        set(&mut r.ssim_window, self.ssim_window);
        set(&mut r.pyramid_levels, self.pyramid_levels);
        set(&mut r.iters_per_level, self.iters_per_level);
        set(&mut r.step_size, self.step_size);
        set(&mut r.convergence_tol, self.convergence_tol);
        let p = &mut c.preprocess;
        if self.target_spacing.is_some() {
            p.target_spacing = self.target_spacing;
        }
        if self.no_resample {
            p.target_spacing = None;
        }
        if self.repeat_to_40 {
            p.repeat_to = Some(REPEAT_LEN);
        }
        set(&mut p.clip_quantile, self.clip_quantile);
        let d = &mut c.descriptor;
        set(&mut d.mask_quantile, self.mask_quantile);
        set(&mut d.sigma, self.sigma);
        if self.unmasked {
            d.masked = false;
        }
        let f = &mut c.focus;
        set(&mut f.strategy, self.focus);
        set(&mut f.mse_quantile, self.mse_quantile);
        if self.lv_mask.is_some() {
            f.lv_mask = self.lv_mask.clone();
        }
        if self.rvip_ant.is_some() {
            f.rvip_ant = self.rvip_ant;
        }
        if self.rvip_inf.is_some() {
            f.rvip_inf = self.rvip_inf;
        }
        set(&mut c.cutoff_threshold, self.cutoff_threshold);
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["input", "phantom_default", "phantom_config", "manifest"])]
pub struct DetectArgs {
    /// 4D sequence (.nrrd or raw+json header).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Generate and analyze the default phantom.
    #[arg(long)]
    pub phantom_default: bool,
    /// Generate and analyze a phantom from a JSON config.
    #[arg(long, value_name = "FILE")]
    pub phantom_config: Option<PathBuf>,
    /// JSON list of subjects for a cohort run.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Input container: nrrd or raw+json (default: from the extension).
    #[arg(long)]
    pub format: Option<VolumeFormat>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the registration fields.
    #[arg(long)]
    pub save_fields: bool,
    /// Subjects processed concurrently in cohort runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub format: Option<VolumeFormat>,
    /// Directory receiving `fields.json` and one file per pair.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct DescriptorArgs {
    /// Directory written by `register`.
    #[arg(long)]
    pub fields: PathBuf,
    /// Source sequence; needed by the mse focus.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<VolumeFormat>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct PhasesArgs {
    #[arg(long, value_name = "CSV")]
    pub descriptor: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QcArgs {
    #[arg(long, value_name = "CSV")]
    pub descriptor: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cutoff_threshold: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted `phases.json`.
    #[arg(long, requires = "truth")]
    pub pred: Option<PathBuf>,
    /// Reference phases (`phases.json` layout or a phantom `truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Optional `qc.json` of the same subject.
    #[arg(long)]
    pub qc: Option<PathBuf>,
    #[arg(long, default_value = "subject")]
    pub subject: String,
    /// JSON list of subjects with `pred`, `truth` and optional `qc`.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["pred", "truth", "qc"], required_unless_present = "pred")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON phantom config; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "T,Z,Y,X", value_parser = parse_shape)]
    pub shape: Option<[usize; 4]>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub phase_offset: Option<f64>,
    #[arg(long)]
    pub truncate_fraction: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Also write the analytic displacement fields.
    #[arg(long)]
    pub with_fields: bool,
    /// Output container: nrrd or raw+json.
    #[arg(long, default_value = "raw+json")]
    pub format: VolumeFormat,
}

fn parse_shape(s: &str) -> std::result::Result<[usize; 4], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("`{p}` is not a count")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected T,Z,Y,X, got `{s}`"))
}

/// One subject of a cohort manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    pub id: String,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub pred: Option<PathBuf>,
    #[serde(default)]
    pub qc: Option<PathBuf>,
    #[serde(default)]
    pub lv_mask: Option<PathBuf>,
    #[serde(default)]
    pub rvip_ant: Option<[f64; 3]>,
    #[serde(default)]
    pub rvip_inf: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub subjects: Vec<Subject>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let m: Manifest = art::read_json(path)?;
        if m.subjects.is_empty() {
            return Err(CliError::usage(format!("manifest `{}` lists no subjects", path.display())));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &m.subjects {
            if s.id.is_empty() || s.id.contains(['/', '\\', ',']) || !seen.insert(&s.id) {
                return Err(CliError::usage(format!("invalid or duplicate subject id `{}`", s.id)));
            }
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect(a) => cmd_detect(&a),
        Command::Register(a) => cmd_register(&a),
        Command::Descriptor(a) => cmd_descriptor(&a),
        Command::Phases(a) => cmd_phases(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Qc(a) => cmd_qc(&a),
    }
}

fn load_input(path: &Path, format: Option<VolumeFormat>) -> Result<Volume4D> {
    let fmt = format.unwrap_or_else(|| VolumeFormat::from_path(path));
    load_volume4d(path, fmt).map_err(|e| CliError::from(e).context(format!("loading `{}`", path.display())))
}

/// Results of one `detect` run.
#[derive(Debug, Clone)]
pub struct Detection {
    pub descriptor: MotionDescriptor,
    pub report: PreprocessReport,
    pub qc: QcVerdict,
    pub phases: Option<PhaseOutcome>,
}

/// Writes descriptor, QC, phases and plot for one subject into `out`.
/// On a rule failure everything but `phases.json` is still written.
pub fn detect_volume(vol: &Volume4D, cfg: &RunConfig, out: &Path, save_fields: bool) -> Result<Detection> {
    art::ensure_dir(out)?;
    art::write_json(&out.join("config.json"), cfg)?;
    let prep = pipeline::prepare(vol, &cfg.preprocess)?;
    let pairs = pipeline::register(&prep, &cfg.registration)?;
    if save_fields {
        art::save_fields(&out.join("fields"), &pairs, &cfg.registration, &cfg.preprocess, &prep.report)?;
    }
    let fields: Vec<_> = pairs.into_iter().map(|p| p.field).collect();
    let focus = pipeline::resolve_focus(&cfg.focus, prep.vol.spatial_shape(), Some(&prep.vol))?;
    let descriptor = pipeline::describe(&fields, &focus, &cfg.descriptor)?;
    let table = DescriptorTable::from(&descriptor);
    write_descriptor(out, &table, &descriptor_meta(&descriptor, &prep))?;
    let qc = write_qc(out, &table, prep.original_t(), cfg.cutoff_threshold)?;
    let phases = write_phases(out, &table, &prep.report)?;
    Ok(Detection { descriptor, report: prep.report, qc, phases: Some(phases) })
}

fn descriptor_meta(d: &MotionDescriptor, prep: &Prepared) -> DescriptorMeta {
    DescriptorMeta {
        t_len: d.len(),
        original_t: prep.original_t(),
        focus: d.focus,
        mask_quantile: d.mask_quantile,
        sigma: d.sigma,
        preprocess_report: prep.report.clone(),
    }
}

fn write_descriptor(out: &Path, table: &DescriptorTable, meta: &DescriptorMeta) -> Result<()> {
    art::write_text(&out.join("descriptor.csv"), &art::descriptor_csv(table))?;
    art::write_json(&out.join("descriptor.json"), meta)
}

fn write_qc(out: &Path, table: &DescriptorTable, original_t: usize, threshold: f64) -> Result<QcVerdict> {
    let verdict = pipeline::quality(&table.vnorm_raw, original_t, threshold)?;
    art::write_json(&out.join("qc.json"), &QcRecord { t_len: original_t, verdict })?;
    Ok(verdict)
}

/// Writes `phases.json` and `plot.svg`; the plot is written even when the
/// rule set fails.
fn write_phases(out: &Path, table: &DescriptorTable, report: &PreprocessReport) -> Result<PhaseOutcome> {
    match pipeline::find_phases(&table.alpha_norm, report) {
        Ok(o) => {
            art::write_json(&out.join("phases.json"), &PhasesRecord::from(&o))?;
            let markers = (report.repeated_to == 0).then_some(&o.phases);
            art::write_text(&out.join("plot.svg"), &descriptor_svg(&table.alpha_norm, &table.vnorm_norm, markers))?;
            Ok(o)
        }
        Err(e) => {
            art::write_text(&out.join("plot.svg"), &descriptor_svg(&table.alpha_norm, &table.vnorm_norm, None))?;
            Err(e)
        }
    }
}

fn phantom_from(path: Option<&Path>) -> Result<PhantomConfig> {
    match path {
        Some(p) => serde_json::from_str(&art::read_text(p)?)
            .map_err(|e| CliError::usage(format!("invalid phantom config `{}`: {e}", p.display()))),
        None => Ok(PhantomConfig::default()),
    }
}

/// Writes the phantom sequence as `sequence.json`/`.raw` and its truth.
fn write_phantom(cfg: &PhantomConfig, out: &Path, format: VolumeFormat, with_fields: bool) -> Result<Volume4D> {
    art::ensure_dir(out)?;
    let (vol, truth) = generate_phantom(cfg)?;
    let name = match format {
        VolumeFormat::Nrrd => "sequence.nrrd",
        VolumeFormat::RawJson => "sequence.json",
    };
    save_volume4d(&vol, &out.join(name), format)?;
    art::write_json(&out.join("truth.json"), &TruthRecord::new(&truth, cfg))?;
    if with_fields {
        let dir = out.join("truth_fields");
        art::ensure_dir(&dir)?;
        for t in 0..vol.len_t() {
            save_field(&analytic_field(cfg, t)?, &dir.join(art::field_file(t)))?;
        }
    }
    Ok(vol)
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    if let Some(m) = &a.manifest {
        return detect_cohort(m, &cfg, a);
    }
    let vol = if let Some(input) = &a.input {
        load_input(input, a.format)?
    } else {
        let pcfg = phantom_from(a.phantom_config.as_deref())?;
        write_phantom(&pcfg, &a.out, VolumeFormat::RawJson, false)?
    };
    let d = detect_volume(&vol, &cfg, &a.out, a.save_fields)?;
    report_subject(None, &d);
    Ok(())
}

fn report_subject(id: Option<&str>, d: &Detection) {
    let who = id.map(|s| format!("{s}: ")).unwrap_or_default();
    if let Some(o) = &d.phases {
        let p = o.phases;
        eprintln!(
            "{who}T={} ed={} ms={} es={} pf={} md={} cutoff={}",
            p.t_len, p.ed, p.ms, p.es, p.pf, p.md, d.qc.cutoff_flag
        );
    }
}

fn subject_config(base: &RunConfig, s: &Subject, dir: &Path) -> Result<RunConfig> {
    let mut c = base.clone();
    if let Some(m) = &s.lv_mask {
        c.focus.lv_mask = Some(art::resolve(dir, m));
    }
    set(&mut c.focus.rvip_ant, s.rvip_ant.map(Some));
    set(&mut c.focus.rvip_inf, s.rvip_inf.map(Some));
    c.validate()?;
    Ok(c)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::new(Kind::Usage, e))
}

fn detect_cohort(manifest: &Path, cfg: &RunConfig, a: &DetectArgs) -> Result<()> {
    let (m, base) = Manifest::load(manifest)?;
    art::ensure_dir(&a.out)?;
    let pool = thread_pool(a.jobs)?;
    let results: Vec<Result<Option<EvalRow>>> = pool.install(|| {
        m.subjects
            .par_iter()
            .map(|s| {
                let run = || -> Result<Option<EvalRow>> {
                    let input = s.input.as_ref().ok_or_else(|| CliError::usage("no `input`"))?;
                    let c = subject_config(cfg, s, &base)?;
                    let vol = load_input(&art::resolve(&base, input), a.format)?;
                    let d = detect_volume(&vol, &c, &a.out.join(&s.id), a.save_fields)?;
                    report_subject(Some(&s.id), &d);
                    let Some(truth) = &s.truth else { return Ok(None) };
                    let gt = art::read_phase_set(&art::resolve(&base, truth))?;
                    let pred = d.phases.expect("detected").phases;
                    let eval = evaluate_phases(&pred, &gt)?;
                    Ok(Some(EvalRow { subject: s.id.clone(), eval, qc: Some(d.qc) }))
                };
                run().map_err(|e| e.context(format!("subject `{}`", s.id)))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(Some(row)) => rows.push(row),
            Ok(None) => {}
            Err(e) => {
                eprintln!("error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if !rows.is_empty() {
        write_eval(&a.out, &rows)?;
    }
    first_err.map_or(Ok(()), Err)
}

fn write_eval(out: &Path, rows: &[EvalRow]) -> Result<()> {
    art::ensure_dir(out)?;
    art::write_text(&out.join("eval.csv"), &art::eval_csv(rows))?;
    let evals: Vec<_> = rows.iter().map(|r| r.eval.clone()).collect();
    art::write_json(&out.join("eval_summary.json"), &summarize(&evals)?)
}

fn cmd_register(a: &RegisterArgs) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    let vol = load_input(&a.input, a.format)?;
    let prep = pipeline::prepare(&vol, &cfg.preprocess)?;
    let pairs = pipeline::register(&prep, &cfg.registration)?;
    art::save_fields(&a.out, &pairs, &cfg.registration, &cfg.preprocess, &prep.report)
}

fn cmd_descriptor(a: &DescriptorArgs) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    let (index, fields) = art::load_fields(&a.fields)?;
    let prep = match &a.input {
        Some(p) => {
            let prep = pipeline::prepare(&load_input(p, a.format)?, &index.preprocess)?;
            if prep.vol.spatial_shape() != index.shape || prep.vol.len_t() != index.t_len {
                return Err(CliError::usage("--input does not match the registered sequence"));
            }
            Some(prep)
        }
        None => None,
    };
    if cfg.focus.strategy == FocusStrategy::Mse && prep.is_none() {
        return Err(CliError::usage("focus `mse` needs the source sequence (--input)"));
    }
    let focus: FocusPoint = pipeline::resolve_focus(&cfg.focus, index.shape, prep.as_ref().map(|p| &p.vol))?;
    let d = pipeline::describe(&fields, &focus, &cfg.descriptor)?;
    art::ensure_dir(&a.out)?;
    let meta = DescriptorMeta {
        t_len: d.len(),
        original_t: index.preprocess_report.original_t,
        focus: d.focus,
        mask_quantile: d.mask_quantile,
        sigma: d.sigma,
        preprocess_report: index.preprocess_report.clone(),
    };
    write_descriptor(&a.out, &DescriptorTable::from(&d), &meta)
}

fn descriptor_report(table: &DescriptorTable, meta: Option<&DescriptorMeta>) -> PreprocessReport {
    match meta {
        Some(m) => m.preprocess_report.clone(),
        None => PreprocessReport { original_t: table.alpha_norm.len(), ..Default::default() },
    }
}

fn cmd_phases(a: &PhasesArgs) -> Result<()> {
    let (table, meta) = art::read_descriptor(&a.descriptor)?;
    art::ensure_dir(&a.out)?;
    let report = descriptor_report(&table, meta.as_ref());
    let o = write_phases(&a.out, &table, &report)?;
    let p = o.phases;
    eprintln!("T={} ed={} ms={} es={} pf={} md={}", p.t_len, p.ed, p.ms, p.es, p.pf, p.md);
    Ok(())
}

fn cmd_qc(a: &QcArgs) -> Result<()> {
    let mut threshold = match &a.config {
        Some(p) => RunConfig::load(p)?.cutoff_threshold,
        None => RunConfig::default().cutoff_threshold,
    };
    set(&mut threshold, a.cutoff_threshold);
    let (table, meta) = art::read_descriptor(&a.descriptor)?;
    art::ensure_dir(&a.out)?;
    let report = descriptor_report(&table, meta.as_ref());
    let v = write_qc(&a.out, &table, report.original_t, threshold)?;
    eprintln!("cutoff={} score={}", v.cutoff_flag, v.robust_score);
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut subjects = Vec::new();
    let base;
    if let Some(m) = &a.manifest {
        let (m, b) = Manifest::load(m)?;
        subjects = m.subjects;
        base = b;
    } else {
        subjects.push(Subject {
            id: a.subject.clone(),
            input: None,
            truth: a.truth.clone(),
            pred: a.pred.clone(),
            qc: a.qc.clone(),
            lv_mask: None,
            rvip_ant: None,
            rvip_inf: None,
        });
        base = PathBuf::new();
    }
    let mut rows = Vec::with_capacity(subjects.len());
    for s in &subjects {
        let need = |p: &Option<PathBuf>, what: &str| {
            p.as_ref()
                .map(|p| art::resolve(&base, p))
                .ok_or_else(|| CliError::usage(format!("subject `{}` has no `{what}`", s.id)))
        };
        let pred = art::read_phase_set(&need(&s.pred, "pred")?)?;
        let gt = art::read_phase_set(&need(&s.truth, "truth")?)?;
        let eval = evaluate_phases(&pred, &gt).map_err(|e| CliError::from(e).context(format!("subject `{}`", s.id)))?;
        let qc = match &s.qc {
            Some(p) => Some(art::read_json::<QcRecord>(&art::resolve(&base, p))?.verdict),
            None => None,
        };
        rows.push(EvalRow { subject: s.id.clone(), eval, qc });
    }
    write_eval(&a.out, &rows)
}

fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let mut cfg = phantom_from(a.config.as_deref())?;
    set(&mut cfg.shape, a.shape);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.amplitude, a.amplitude);
    set(&mut cfg.phase_offset, a.phase_offset);
    set(&mut cfg.truncate_fraction, a.truncate_fraction);
    set(&mut cfg.noise_sigma, a.noise_sigma);
    write_phantom(&cfg, &a.out, a.format, a.with_fields)?;
    Ok(())
}
