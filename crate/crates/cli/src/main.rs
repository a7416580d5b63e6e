use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use rppg_core::clip::VideoClip;
use rppg_core::editor::{psnr, ssim, AnalyticEditor, ClipEditor, EditorGenerator, LearnedEditor, Pyramid, DEFAULT_LEVELS};
use rppg_core::eval::benchmark::{detail_table, metrics_table, Nuisances};
use rppg_core::eval::diagnose::{fixed_rate_clips, flicker_lock, flicker_table, summarize, summary_table};
use rppg_core::eval::edits::amplitude_sweep;
use rppg_core::eval::fidelity::fidelity_table;
use rppg_core::eval::plot::{line_plot, plot_table, Series};
use rppg_core::eval::table::Table;
use rppg_core::eval::*;
use rppg_core::extractor::{classical_extract, ClassicalMethod, Extractor, ExtractorConfig};
use rppg_core::signal::{bandpass, Waveform};
use rppg_core::synth::{NuisanceSpec, RegionLayout};
use rppg_core::train::stage1::train_stage1;
use rppg_core::train::stage2::train_editor;
use rppg_core::train::stage3::train_stage3;
use rppg_core::train::{EpochMetrics, MetricsLog, TrainConfig, UnlabeledClip};
use rppg_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rppg", version, about = "Synthetic rPPG bench, chrominance editor and intervention-based training")]
struct Cli {
    /// Overrides the seed of whichever configuration the command uses.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file (dataset or training, per command).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes a synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Applies one intervention to a clip.
    Edit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 6, allow_hyphen_values = true)]
        tau: i64,
        #[arg(long, default_value_t = 1.5)]
        rho: f64,
        #[arg(long, value_enum, default_value_t = StyleArg::Intervention)]
        style: StyleArg,
        #[arg(long, default_value_t = 0.004)]
        strength: f64,
        /// Trained generator; the analytic editor is used without one.
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Extracts a pulse waveform from a clip.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        method: MethodArg,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs one training stage on a dataset directory.
    Train {
        #[arg(long)]
        stage: u8,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Stage 2: frozen reference extractor.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Stage 3: trained generator; analytic editor otherwise.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Heart-rate errors on clean and nuisance-injected held-out clips.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
        /// Comma list of `green`, `chrom`, `pos` and `name=weights.rpwt`.
        #[arg(long, default_value = "green,chrom,pos")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        detail: Option<PathBuf>,
    },
    /// PSNR and SSIM of the four edit modes on held-out clips.
    Fidelity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = StyleArg::Single)]
        style: StyleArg,
        #[arg(long, default_value_t = 0.004)]
        strength: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Renders a CSV as an SVG chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
    /// Flicker-lock diagnostic, waveform overlay and amplitude sweep.
    Diagnose {
        #[arg(long)]
        out: PathBuf,
        /// Extra extractors as `name=weights.rpwt`, comma separated.
        #[arg(long, default_value = "")]
        methods: String,
        #[arg(long, default_value_t = 10)]
        clips: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Null,
    Amplitude,
    Phase,
    Frequency,
}

impl From<ModeArg> for EditMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Null => EditMode::Null,
            ModeArg::Amplitude => EditMode::Amplitude,
            ModeArg::Phase => EditMode::Phase,
            ModeArg::Frequency => EditMode::Frequency,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Single,
    Intervention,
}

impl From<StyleArg> for EditStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Single => EditStyle::Single,
            StyleArg::Intervention => EditStyle::Intervention,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Green,
    Chrom,
    Pos,
    Net,
}

/// 2 configuration, 3 data, 4 numeric.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::OutOfRange(_) | Error::UntrainedGenerator => 2,
        Error::Io(_)
        | Error::Parse(_)
        | Error::NotAClip
        | Error::NotAWeights
        | Error::MalformedHeader(_)
        | Error::TruncatedPayload
        | Error::MissingParam(_)
        | Error::LengthMismatch(..)
        | Error::EmptyMask(_)
        | Error::TooShort { .. } => 3,
        Error::ZeroVariance | Error::NoPeak | Error::EmptyBand(..) | Error::MismatchedBins | Error::Diverged { .. } | Error::Diff(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn config_text(cli: &Cli) -> Result<Option<String>> {
    cli.config.as_ref().map(|p| fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))).transpose()
}

fn dataset_config(cli: &Cli) -> Result<DatasetConfig> {
    let mut c = match config_text(cli)? {
        Some(t) => DatasetConfig::parse(&t)?,
        None => DatasetConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    Ok(c)
}

fn train_config(cli: &Cli, stage: u8) -> Result<TrainConfig> {
    let base = if stage == 2 { TrainConfig::stage2() } else { TrainConfig::default() };
    let mut c = match config_text(cli)? {
        Some(t) => TrainConfig::parse_over(base, &t)?,
        None => base,
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn write_table(t: &Table, path: &Path) -> Result<()> {
    t.write_to(BufWriter::new(File::create(path)?))
}

fn read_table(path: &Path) -> Result<Table> {
    Table::read_from(BufReader::new(File::open(path)?))
}

fn read_waveform(path: &Path) -> Result<Waveform> {
    Waveform::read_csv(BufReader::new(File::open(path)?))
}

fn write_waveform(w: &Waveform, path: &Path) -> Result<()> {
    w.write_csv(BufWriter::new(File::create(path)?))
}

fn log_epoch(r: &EpochMetrics) {
    let vals: Vec<String> = r.values.iter().map(|v| format!("{v:.5}")).collect();
    info!("epoch {} lr {:.2e} {}", r.epoch, r.lr, vals.join(" "));
}

fn write_log(log: &MetricsLog, path: Option<&PathBuf>) -> Result<()> {
    if let Some(p) = path {
        log.write_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Synth { out } => {
            let cfg = dataset_config(cli)?;
            let m = synth_dataset(&cfg, out)?;
            info!("wrote {} clips to {}", m.entries.len(), out.display());
            Ok(())
        }
        Cmd::Edit { input, signal, mode, alpha, tau, rho, style, strength, generator, out, report } => {
            let clip = VideoClip::read(input)?;
            let s0 = read_waveform(signal)?;
            let layout = RegionLayout::for_frame(clip.h, clip.w);
            let pyr = Pyramid::new(clip.h, clip.w, DEFAULT_LEVELS)?;
            let editor: Box<dyn ClipEditor> = match generator {
                Some(p) => Box::new(LearnedEditor { generator: EditorGenerator::load(p)?, pyramid: pyr.clone(), alpha: 1.0 }),
                None => Box::new(AnalyticEditor::new(pyr.clone(), *strength)),
            };
            let params = EditParams { alpha: *alpha, tau: *tau, rho: *rho, ..Default::default() };
            let edited = styled_edit(&clip, &layout, &s0, (*mode).into(), (*style).into(), &params, editor.as_ref(), &pyr)?;
            edited.write(out)?;
            if let Some(r) = report {
                let row = FidelityRow { mode: (*mode).into(), psnr: psnr(&clip, &edited)?, ssim: ssim(&clip, &edited)?, n_frames: clip.t };
                write_table(&fidelity_table(&[row]), r)?;
            }
            Ok(())
        }
        Cmd::Extract { input, method, weights, out } => {
            let clip = VideoClip::read(input)?;
            let skin = clip.mask.clone().unwrap_or_else(|| RegionLayout::for_frame(clip.h, clip.w).skin_mask(clip.h, clip.w));
            let w = match method {
                MethodArg::Green => classical_extract(&clip, &skin, ClassicalMethod::Green)?,
                MethodArg::Chrom => classical_extract(&clip, &skin, ClassicalMethod::Chrom)?,
                MethodArg::Pos => classical_extract(&clip, &skin, ClassicalMethod::Pos)?,
                MethodArg::Net => {
                    let p = weights.as_ref().ok_or_else(|| Error::Config("--method net needs --weights".into()))?;
                    Extractor::load(p)?.extract(&clip)?
                }
            };
            write_waveform(&w, out)
        }
        Cmd::Train { stage, data, out, log, reference, generator } => {
            let cfg = train_config(cli, *stage)?;
            let labeled = load_split(data, Split::Train)?;
            match stage {
                1 => {
                    let res = train_stage1(&labeled, &ExtractorConfig::default(), &cfg, log_epoch)?;
                    finish(res.diverged, &res.log, log.as_ref())?;
                    res.extractor.save(out)
                }
                2 => {
                    let p = reference.as_ref().ok_or_else(|| Error::Config("stage 2 needs --reference".into()))?;
                    let res = train_editor(&labeled, &Extractor::load(p)?, &cfg, log_epoch)?;
                    finish(res.diverged, &res.log, log.as_ref())?;
                    res.generator.save(out)
                }
                3 => {
                    // Labels are dropped here; stage 3 only ever sees clips and layouts.
                    let unlabeled: Vec<UnlabeledClip> = labeled.iter().map(UnlabeledClip::from).collect();
                    let first = unlabeled.first().ok_or_else(|| Error::Config("empty training split".into()))?;
                    let pyr = Pyramid::new(first.clip.h, first.clip.w, DEFAULT_LEVELS)?;
                    let editor: Box<dyn ClipEditor> = match generator {
                        Some(p) => Box::new(LearnedEditor { generator: EditorGenerator::load(p)?, pyramid: pyr, alpha: 1.0 }),
                        None => Box::new(AnalyticEditor::new(pyr, cfg.editor_strength)),
                    };
                    let res = train_stage3(&unlabeled, editor.as_ref(), &ExtractorConfig::default(), &cfg, log_epoch)?;
                    finish(res.diverged, &res.log, log.as_ref())?;
                    res.extractor.save(out)
                }
                s => Err(Error::Config(format!("unknown stage {s}; expected 1, 2 or 3"))),
            }
        }
        Cmd::Benchmark { data, methods, out, detail } => {
            let clips = load_split(data, Split::Test)?;
            let (nets, skipped) = load_networks(methods)?;
            let mut list: Vec<Method<'_>> = classical_methods(methods)?.into_iter().map(Method::Classical).collect();
            list.extend(nets.iter().map(|(name, e)| Method::Network { name: name.clone(), extractor: e }));
            let (mut rows, det) = benchmark(&clips, &list, &Nuisances::default())?;
            for name in skipped {
                warn!("skipping `{name}`: weights not found");
                rows.push(MetricsRow { method: name, scenario: Scenario::Clean, mae: f64::NAN, rmse: f64::NAN, r: f64::NAN, n_clips: 0, delta_mae: None });
            }
            write_table(&metrics_table(&rows), out)?;
            if let Some(d) = detail {
                write_table(&detail_table(&det), d)?;
            }
            Ok(())
        }
        Cmd::Fidelity { data, style, strength, out } => {
            let clips = load_split(data, Split::Test)?;
            let first = clips.first().ok_or_else(|| Error::Config("empty test split".into()))?;
            let pyr = Pyramid::new(first.clip.h, first.clip.w, DEFAULT_LEVELS)?;
            let editor = AnalyticEditor::new(pyr.clone(), *strength);
            let rows = fidelity(&clips, &EditMode::ALL, (*style).into(), &EditParams::default(), &editor, &pyr)?;
            write_table(&fidelity_table(&rows), out)
        }
        Cmd::Plot { input, out, title } => {
            let t = read_table(input)?;
            let name = title.clone().unwrap_or_else(|| input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
            fs::write(out, plot_table(&t, &name)?)?;
            Ok(())
        }
        Cmd::Diagnose { out, methods, clips } => diagnose(cli, out, methods, *clips),
    }
}

fn finish(diverged: Option<String>, log: &MetricsLog, path: Option<&PathBuf>) -> Result<()> {
    write_log(log, path)?;
    match diverged {
        Some(d) => Err(Error::Diverged { epoch: log.rows.len(), detail: d }),
        None => Ok(()),
    }
}

fn classical_methods(spec: &str) -> Result<Vec<ClassicalMethod>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && !s.contains('='))
        .map(|s| match s {
            "green" => Ok(ClassicalMethod::Green),
            "chrom" => Ok(ClassicalMethod::Chrom),
            "pos" => Ok(ClassicalMethod::Pos),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        })
        .collect()
}

/// Networks named `name=path`; those whose file is missing are returned by
/// name so the caller can report them.
fn load_networks(spec: &str) -> Result<(Vec<(String, Extractor)>, Vec<String>)> {
    let mut nets = Vec::new();
    let mut missing = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| s.contains('=')) {
        let (name, path) = item.split_once('=').expect("checked above");
        let path = Path::new(path.trim());
        if path.exists() {
            nets.push((name.trim().to_string(), Extractor::load(path)?));
        } else {
            missing.push(name.trim().to_string());
        }
    }
    Ok((nets, missing))
}

fn diagnose(cli: &Cli, out: &Path, methods: &str, n: usize) -> Result<()> {
    fs::create_dir_all(out)?;
    let cfg = dataset_config(cli)?;
    let clips = fixed_rate_clips(&cfg, n, 60.0, cfg.seed ^ 0xd1a6)?;
    let (nets, missing) = load_networks(methods)?;
    for m in missing {
        warn!("skipping `{m}`: weights not found");
    }
    let mut list = vec![Method::Classical(ClassicalMethod::Green), Method::Classical(ClassicalMethod::Pos)];
    list.extend(nets.iter().map(|(name, e)| Method::Network { name: name.clone(), extractor: e }));
    let flicker = NuisanceSpec::flicker(100.0, 0.02);
    let rows = flicker_lock(&clips, &list, &flicker)?;
    write_table(&flicker_table(&rows), &out.join("flicker.csv"))?;
    write_table(&summary_table(&summarize(&rows, 60.0, 100.0, 3.0)), &out.join("flicker_summary.csv"))?;

    // Waveform overlay on the first flickered clip.
    let c = clips.first().ok_or_else(|| Error::Config("diagnose needs at least one clip".into()))?;
    let flickered = rppg_core::synth::add_nuisance(&c.clip, &flicker);
    let times: Vec<f64> = (0..c.clip.t).map(|i| i as f64 / c.clip.fps).collect();
    let mut overlay = vec![Series { name: "ground truth".into(), x: times.clone(), y: standardized(&bandpass(&c.s_gt)?) }];
    for m in &list {
        overlay.push(Series { name: m.name(), x: times.clone(), y: standardized(&m.extract(c, &flickered)?) });
    }
    write_series(&overlay, &out.join("waveforms.csv"))?;
    fs::write(out.join("waveforms.svg"), line_plot("60 bpm pulse under 100 bpm flicker", "time (s)", "standardized signal", &overlay)?)?;

    // Amplitude sweep on the clean clip.
    let pyr = Pyramid::new(c.clip.h, c.clip.w, DEFAULT_LEVELS)?;
    let editor = AnalyticEditor::new(pyr.clone(), 0.004);
    let sweep = amplitude_sweep(&c.clip, &c.layout, &c.s_gt, &[-3.0, -1.0, 0.0, 1.0, 3.0], &editor, &pyr)?;
    let series: Vec<Series> = sweep.iter().map(|(a, w)| Series { name: format!("alpha={a}"), x: times.clone(), y: w.samples.clone() }).collect();
    write_series(&series, &out.join("sweep.csv"))?;
    fs::write(out.join("sweep.svg"), line_plot("Amplitude sweep (POS)", "time (s)", "band-passed POS", &series)?)?;
    Ok(())
}

fn standardized(w: &Waveform) -> Vec<f64> {
    w.standardized().map(|s| s.samples).unwrap_or_else(|| vec![0.0; w.len()])
}

fn write_series(series: &[Series], path: &Path) -> Result<()> {
    let mut header = vec!["t_seconds"];
    header.extend(series.iter().map(|s| s.name.as_str()));
    let mut t = Table::new(&header);
    for i in 0..series[0].x.len() {
        let mut row = vec![rppg_core::eval::table::num(series[0].x[i])];
        row.extend(series.iter().map(|s| rppg_core::eval::table::num(s.y[i])));
        t.push(row);
    }
    write_table(&t, path)
}
