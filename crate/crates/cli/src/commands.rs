use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lvquant::corpus::{read_index, read_subject, roi_samples, segmentation_samples, write_cohort, SubjectRecord};
use lvquant::gradcheck::GradCheck;
use lvquant::image::Image;
use lvquant::nets::{check_network_gradients, checkpoint, Family, Network, NetworkSpec};
use lvquant::phantom::make_cohort;
use lvquant::quantify::{analyze_subject, crop_volume, detect_roi, physio, segment, PhysioReport, SubjectEntry};
use lvquant::train::{kfold_split, log_csv, train_fold, FoldPlan, Sample};
use lvquant::volume::{read_volume, write_volume};
use serde_json::json;

use crate::config::{Role, RunConfig, Toggle};
use crate::overlay::overlay_pgm;
use crate::{Cli, Command, CommonArgs, GradcheckArgs, NetArgs, PhantomAction, QuantifyArgs, ReportArgs, SegmentArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { action: PhantomAction::Gen(a) } => {
            let mut cfg = load(&a.common)?;
            if let Some(n) = a.n {
                cfg.phantom.n = n;
            }
            if a.hard_apex {
                cfg.phantom.spec.hard_apex = true;
            }
            phantom_gen(&cfg, &a.out)
        }
        Command::Train(a) => train_cmd(a),
        Command::Segment(a) => segment_cmd(a),
        Command::Quantify(a) => quantify_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Paramcount(a) => paramcount_cmd(a),
    }
}

fn load(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_net_args(cfg: &mut RunConfig, a: &NetArgs) {
    if let Some(f) = a.arch {
        cfg.net.arch = f;
    }
    let toggle = |on: bool, off: bool, cur: Toggle| if on { Toggle::On } else if off { Toggle::Off } else { cur };
    cfg.net.residual_output = toggle(a.residual_output, a.no_residual_output, cfg.net.residual_output);
    cfg.net.residual_input = toggle(a.residual_input, a.no_residual_input, cfg.net.residual_input);
    if let Some(s) = a.shrink {
        cfg.net.shrink = s;
    }
    if let Some(l) = a.levels {
        cfg.net.levels = l;
    }
    if let Some(b) = a.base_features {
        cfg.net.base_features = b;
    }
}

fn phantom_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cohort = make_cohort(cfg.phantom.n, &cfg.phantom.spec, cfg.seed)?;
    let index = write_cohort(out, &cohort)?;
    cfg.echo(out)?;
    println!("{}", json!({ "subjects": index.subjects.len(), "out": out.display().to_string() }));
    Ok(())
}

fn fold_plan(records: &[SubjectRecord], cfg: &RunConfig) -> Result<FoldPlan> {
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    Ok(kfold_split(&ids, cfg.train.k, cfg.seed)?)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = load(&a.common)?;
    apply_net_args(&mut cfg, &a.net);
    let t = &mut cfg.train;
    if let Some(r) = a.role {
        t.role = r;
    }
    if let Some(e) = a.epochs {
        t.params.epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.params.batch_size = b;
    }
    if let Some(lr) = a.lr {
        t.params.adam.lr = lr;
    }
    if let Some(f) = a.fold {
        t.fold = f;
    }
    if a.no_augment {
        t.params.augment = false;
    }
    t.params.seed = cfg.seed;
    t.params.augment_cfg.seed = cfg.seed;

    let index = read_index(&a.corpus).context("reading cohort index")?;
    let plan = fold_plan(&index.subjects, &cfg)?;
    let mut corpus: Vec<Sample> = Vec::new();
    let mut native = None;
    for rec in &index.subjects {
        let vols = read_subject(&a.corpus, rec)?;
        native.get_or_insert((vols[0].h, vols[0].w));
        corpus.extend(match cfg.train.role {
            Role::Seg => segmentation_samples(&rec.id, &vols, &cfg.train.phases, (cfg.train.crop, cfg.train.crop))?,
            Role::Roi => roi_samples(&rec.id, &vols, &cfg.train.phases, cfg.train.roi_factor)?,
        });
    }
    let (h, w) = native.ok_or_else(|| anyhow!("cohort is empty"))?;
    let input = match cfg.train.role {
        Role::Seg => cfg.train.crop,
        Role::Roi => {
            if h != w || h % cfg.train.roi_factor != 0 {
                bail!("native {h}x{w} slices cannot be downsampled by {}", cfg.train.roi_factor);
            }
            h / cfg.train.roi_factor
        }
    };
    let spec = cfg.net.spec(input);
    let mut net = Network::<f32>::build(&spec, cfg.seed)?;
    fs::create_dir_all(&a.out)?;
    cfg.echo(&a.out)?;
    let mut params = cfg.train.params.clone();
    params.checkpoint = Some(a.out.join("best.ckpt"));
    let outcome = train_fold(&mut net, &corpus, &plan, cfg.train.fold, &params)?;
    fs::write(a.out.join("train_log.csv"), log_csv(&outcome.log))?;
    fs::write(a.out.join("folds.json"), serde_json::to_string_pretty(&plan)? + "\n")?;
    let best = &outcome.log[outcome.best_epoch];
    let summary = json!({
        "arch": spec.family.name(),
        "role": cfg.train.role,
        "params": net.param_count(),
        "best_epoch": outcome.best_epoch,
        "best_val_loss": best.val_loss,
        "best_val_dice": best.val_dice,
    });
    fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("{summary}");
    Ok(())
}

fn segment_cmd(a: SegmentArgs) -> Result<()> {
    let roi_net: Network<f32> = checkpoint::load(&a.roi_net).context("loading ROI network")?;
    let seg_net: Network<f32> = checkpoint::load(&a.seg_net).context("loading segmentation network")?;
    let vol = read_volume(&a.input)?;
    let roi = detect_roi(&vol, &roi_net, seg_net.spec().input_size)?;
    let crop = crop_volume(&vol, &roi.window)?;
    let images: Vec<Image> = (0..crop.slices).map(|s| crop.image(s)).collect();
    let labeled = crop.with_labels(segment(&images, &seg_net)?)?;
    write_volume(&labeled, &a.out)?;
    println!("{}", serde_json::to_string(&roi)?);
    Ok(())
}

fn quantify_cmd(a: QuantifyArgs) -> Result<()> {
    let cfg = load(&a.common)?;
    let index = read_index(&a.corpus).context("reading cohort index")?;
    let selected: Vec<&SubjectRecord> = match a.fold {
        None => index.subjects.iter().collect(),
        Some(f) => {
            let plan = fold_plan(&index.subjects, &cfg)?;
            let val = plan.validation(f);
            index.subjects.iter().filter(|r| val.contains(r.id.as_str())).collect()
        }
    };
    let nets = match (&a.roi_net, &a.seg_net) {
        (Some(r), Some(s)) => Some((
            checkpoint::load::<f32>(r).context("loading ROI network")?,
            checkpoint::load::<f32>(s).context("loading segmentation network")?,
        )),
        _ => None,
    };
    fs::create_dir_all(&a.out)?;
    cfg.echo(&a.out)?;
    let mut entries = Vec::with_capacity(selected.len());
    for rec in selected {
        let vols = read_subject(&a.corpus, rec)?;
        let result = match &nets {
            None => physio(&vols, rec.heart_rate_bpm).map(|p| p.measures),
            Some((roi, seg)) => analyze_subject(&vols, roi, seg, rec.heart_rate_bpm).and_then(|an| {
                let dir = a.out.join("segmented").join(&rec.id);
                fs::create_dir_all(&dir)?;
                for v in &an.segmented {
                    write_volume(v, dir.join(format!("phase_{:02}.cqv", v.phase)))?;
                }
                Ok(an.physio.measures)
            }),
        };
        let (predicted, error) = match result {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };
        entries.push(SubjectEntry { id: rec.id.clone(), predicted, truth: rec.truth, error });
    }
    let report = PhysioReport::build(entries)?;
    fs::write(a.out.join("report.json"), report.to_json()?)?;
    fs::write(a.out.join("report.csv"), report.to_csv())?;
    let failed = report.subjects.iter().filter(|s| s.error.is_some()).count();
    println!("{}", json!({ "subjects": report.subjects.len(), "failed": failed, "outliers": report.outliers.len() }));
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report: PhysioReport = serde_json::from_str(&text).context("parsing report")?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("summary.csv"), report.to_csv())?;
    fs::write(a.out.join("agreement_points.csv"), report.plot_csv())?;
    let seg_dir = a.segmented.clone().unwrap_or_else(|| a.report.parent().unwrap_or(Path::new(".")).join("segmented"));
    let mut overlays = 0;
    if seg_dir.is_dir() {
        let ov = a.out.join("overlays");
        fs::create_dir_all(&ov)?;
        for s in &report.subjects {
            let p = seg_dir.join(&s.id).join("phase_00.cqv");
            if !p.is_file() {
                continue;
            }
            let v = read_volume(&p)?;
            let mid = v.slices / 2;
            let labels = v.label_map(mid).ok_or_else(|| anyhow!("{} has no labels", p.display()))?;
            fs::write(ov.join(format!("{}_ed_slice{mid:02}.pgm", s.id)), overlay_pgm(&v.image(mid), &labels))?;
            overlays += 1;
        }
    }
    println!("{}", json!({ "measures": report.stats.len(), "overlays": overlays }));
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.net.levels = 2;
    cfg.net.base_features = 4;
    apply_net_args(&mut cfg, &a.net);
    let spec = cfg.net.spec(a.size);
    let report = check_network_gradients(&spec, a.seed, GradCheck::f64().with_rtol(a.rtol), a.stride)?;
    println!(
        "{}",
        json!({
            "arch": spec.family.name(),
            "checked": report.checked,
            "kinks": report.kinks,
            "max_rel_err": report.max_rel_err,
            "rtol": report.rtol,
            "passed": report.passed(),
        })
    );
    if !report.passed() {
        bail!("gradient check failed: {report}");
    }
    Ok(())
}

fn paramcount_cmd(a: crate::ParamcountArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    let full = NetworkSpec::full_size(Family::UnetBnRl);
    cfg.net.levels = full.levels;
    cfg.net.base_features = full.base_features;
    apply_net_args(&mut cfg, &a.net);
    let spec = cfg.net.spec(a.size);
    let count = lvquant::nets::declared_param_count(&spec)?;
    let mut reference = cfg.net.clone();
    reference.arch = Family::UnetBnRl;
    reference.residual_output = Toggle::Auto;
    reference.residual_input = Toggle::Auto;
    let base = lvquant::nets::declared_param_count(&reference.spec(a.size))?;
    let pct = (count as f64 / base as f64 - 1.0) * 100.0;
    println!("{count} {pct:+.2}%");
    Ok(())
}
