use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dplens::attacks::{run_membership_experiment, write_mia_csv, MiaRow};
use dplens::clipping::clipping_bias_diagnostic;
use dplens::model::{population_stats, DifferentiableTask, LogisticTask, QuadraticTask, TinyMlpTask};
use dplens::predictor::{
    decelerator, delta_l_priv, delta_l_priv_star, delta_l_pub_star, optimal_batch_dp, optimal_mix_alpha,
    AlphaSchedule, ImprovementInputs, MixInputs,
};
use dplens::privacy::{calibrate_sigma, PrivacyBudget};
use dplens::rng::{seeded, substream};
use dplens::trainer::{
    continual_pretrain, empirical_improvement_oracle, mixed_train, pretrain_contrast, ContinualConfig, FourWay,
    TrainRun,
};
use dplens::Error;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{build_logistic, build_mlp, build_quadratic, ScheduleSpec, TaskSpec};
use crate::plot::{emit_svg_lineplot, emit_with_markers, render_svg, Axis, Scales};
use crate::{CliError, Command, Context};

const LOG_LOG: Scales = Scales {
    x: Axis::Log,
    y: Axis::Log,
};
const LIN_LOG: Scales = Scales {
    x: Axis::Linear,
    y: Axis::Log,
};

pub(crate) fn dispatch(command: Command, ctx: &Context) -> Result<(), CliError> {
    match command {
        Command::Calibrate => calibrate(ctx),
        Command::Predict => predict(ctx, false),
        Command::SweepBatch => predict(ctx, true),
        Command::Oracle => per_seed(ctx, oracle),
        Command::Train => per_seed(ctx, train),
        Command::Continual => per_seed(ctx, continual),
        Command::Fourway => fourway(ctx),
        Command::Mia => mia(ctx),
        Command::FigBreakdown => breakdown(ctx),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?)))
}

fn fmt(x: f64) -> String {
    x.to_string()
}

/// Runs `f` for every configured seed in parallel. Each seed writes its own
/// files; stdout lines are printed afterwards in seed order.
fn per_seed(ctx: &Context, f: fn(&Context, u64) -> Result<String, CliError>) -> Result<(), CliError> {
    let lines: Vec<String> = ctx
        .config
        .seeds
        .par_iter()
        .map(|&seed| f(ctx, seed))
        .collect::<Result<_, _>>()?;
    for line in lines {
        println!("{line}");
    }
    Ok(())
}

fn calibrate(ctx: &Context) -> Result<(), CliError> {
    let b = &ctx.config.budget;
    let budget = PrivacyBudget::new(b.epsilon, b.delta)?;
    let path = ctx.out.join("calibrate.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["B", "T", "sigma", "mu", "epsilon", "delta"])?;
    for &batch in &ctx.config.calibrate.batches {
        let cal = calibrate_sigma(batch, b.dataset_size, b.samples, &budget)?;
        w.write_record([
            batch.to_string(),
            cal.steps.to_string(),
            fmt(cal.sigma),
            fmt(cal.mu),
            fmt(b.epsilon),
            fmt(b.delta),
        ])?;
    }
    w.flush()?;
    drop(w);
    emit_svg_lineplot(&path, &["B", "sigma"], LOG_LOG)?;
    println!("wrote {}", path.display());
    Ok(())
}

const PREDICT_HEADER: [&str; 6] = ["B", "delta_pub_star", "delta_priv_star", "decelerator", "B_star", "alpha_star"];

fn predict_row(inputs: &ImprovementInputs<f64>, public_batch: f64) -> Result<[String; 6], CliError> {
    let b_star = match optimal_batch_dp(inputs) {
        Ok(b) => fmt(b),
        Err(Error::NoNoiseNoInteriorOptimum) => String::new(),
        Err(e) => return Err(e.into()),
    };
    let mix = MixInputs {
        base: *inputs,
        b0: public_batch,
        b1: inputs.batch,
    };
    Ok([
        fmt(inputs.batch),
        fmt(delta_l_pub_star(inputs)?),
        fmt(delta_l_priv_star(inputs)?),
        fmt(decelerator(inputs)?),
        b_star,
        fmt(optimal_mix_alpha(&mix)?.alpha),
    ])
}

fn predict(ctx: &Context, sweep: bool) -> Result<(), CliError> {
    let spec = &ctx.config.predict;
    let name = if sweep { "sweep_batch.csv" } else { "predict.csv" };
    let path = ctx.out.join(name);
    let mut w = csv_writer(&path)?;
    w.write_record(PREDICT_HEADER)?;
    let batches = if sweep {
        spec.grid.values()?
    } else {
        vec![spec.inputs.batch]
    };
    for b in batches {
        w.write_record(predict_row(&spec.inputs.with_batch(b), spec.public_batch)?)?;
    }
    w.flush()?;
    drop(w);
    if sweep {
        emit_svg_lineplot(&path, &["B", "delta_pub_star", "delta_priv_star"], LOG_LOG)?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn breakdown(ctx: &Context) -> Result<(), CliError> {
    let spec = &ctx.config.breakdown;
    let grid = spec.grid.values()?;
    for (stage, inputs) in [("pretrain", spec.pretrain), ("finetune", spec.finetune)] {
        let b_star = optimal_batch_dp(&inputs)?;
        let mut batches = grid.clone();
        batches.push(b_star);
        batches.sort_by(f64::total_cmp);
        let path = ctx.out.join(format!("breakdown_{stage}.csv"));
        let mut w = csv_writer(&path)?;
        w.write_record([
            "B",
            "gHg_term",
            "tr_H_Sigma_term",
            "decelerator",
            "delta_pub_star",
            "delta_priv_star",
            "B_star",
        ])?;
        for b in batches {
            let at = inputs.with_batch(b);
            w.write_record([
                fmt(b),
                fmt(b * at.g_h_g),
                fmt(at.tr_h_sigma),
                fmt(decelerator(&at)?),
                fmt(delta_l_pub_star(&at)?),
                fmt(delta_l_priv_star(&at)?),
                fmt(b_star),
            ])?;
        }
        w.flush()?;
        drop(w);
        emit_with_markers(
            &path,
            &["B", "gHg_term", "tr_H_Sigma_term", "decelerator"],
            LOG_LOG,
            &[b_star],
        )?;
        let text = std::fs::read_to_string(&path)?;
        let svg = render_svg(&text, &["B", "delta_pub_star", "delta_priv_star"], LOG_LOG, &[b_star])?;
        std::fs::write(ctx.out.join(format!("breakdown_{stage}_improvement.svg")), svg)?;
        println!("{stage}: B* = {b_star:.2}");
    }
    Ok(())
}

fn oracle(ctx: &Context, seed: u64) -> Result<String, CliError> {
    let cfg = &ctx.config;
    let TaskSpec::Quadratic {
        dim,
        eig_min,
        eig_max,
        data_var,
        init_offset,
    } = cfg.task
    else {
        return Err(CliError::Config("`oracle` needs a quadratic task".into()));
    };
    let spec = &cfg.oracle;
    let task = build_quadratic(dim, eig_min, eig_max, data_var)?;
    let w = vec![init_offset; dim];
    let pop = population_stats(&task, &w)?;
    let mut rng = seeded(seed);
    let sample = task.draw_batch(&mut rng, spec.c_samples.max(2));
    let c_hat = clipping_bias_diagnostic(&task.per_sample_gradients(&w, &sample), &cfg.rule)?.c_hat;
    let scale = cfg.rule.lr_scale();

    let mut cells = Vec::new();
    for &eta in &spec.etas {
        for &batch in &spec.batches {
            for &sigma in &spec.sigmas {
                cells.push((eta * scale, batch, sigma));
            }
        }
    }
    let base = rng.random::<u64>();
    let rows: Vec<[f64; 8]> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(eta, batch, sigma))| -> Result<[f64; 8], CliError> {
            let est = empirical_improvement_oracle(
                &task,
                &w,
                eta,
                batch,
                &cfg.rule,
                sigma,
                spec.trials,
                &mut substream(base, i as u64),
            )?;
            let inputs = ImprovementInputs {
                g_norm_sq: pop.g_norm_sq,
                g_h_g: pop.g_h_g,
                tr_h: pop.tr_h,
                tr_h_sigma: pop.tr_h_sigma,
                sigma,
                c: c_hat,
                batch: batch as f64,
            };
            let predicted = delta_l_priv(eta, &inputs)?;
            let z = (est.mean - predicted) / est.standard_error;
            Ok([eta, batch as f64, sigma, c_hat, est.mean, est.standard_error, predicted, z])
        })
        .collect::<Result<_, _>>()?;

    let path = ctx.out.join(format!("oracle_seed{seed}.csv"));
    let mut w = csv_writer(&path)?;
    w.write_record([
        "eta",
        "B",
        "sigma",
        "c_hat",
        "trials",
        "empirical_mean",
        "standard_error",
        "predicted",
        "z",
    ])?;
    for r in &rows {
        w.write_record([
            fmt(r[0]),
            fmt(r[1]),
            fmt(r[2]),
            fmt(r[3]),
            spec.trials.to_string(),
            fmt(r[4]),
            fmt(r[5]),
            fmt(r[6]),
            fmt(r[7]),
        ])?;
    }
    w.flush()?;
    let within = rows.iter().filter(|r| r[7].abs() <= 3.0).count();
    Ok(format!(
        "seed {seed}: {within}/{} cells within 3 SE -> {}",
        rows.len(),
        path.display()
    ))
}

/// Public and private tasks plus the starting point for one seed. Logistic
/// tasks draw the two datasets from one generator; the MLP's private task
/// is a related task sharing the teacher's hidden layer.
enum Tasks {
    Quadratic(QuadraticTask<f64>, QuadraticTask<f64>, Vec<f64>),
    Logistic(LogisticTask<f64>, LogisticTask<f64>, Vec<f64>),
    Mlp(TinyMlpTask<f64>, TinyMlpTask<f64>, Vec<f64>),
}

fn build_tasks<R: Rng + ?Sized>(spec: &TaskSpec, rng: &mut R) -> Result<Tasks, CliError> {
    Ok(match *spec {
        TaskSpec::Quadratic {
            dim,
            eig_min,
            eig_max,
            data_var,
            init_offset,
        } => {
            let t = build_quadratic(dim, eig_min, eig_max, data_var)?;
            Tasks::Quadratic(t.clone(), t, vec![init_offset; dim])
        }
        TaskSpec::Logistic {
            dim,
            n,
            signal,
            flip,
            l2,
        } => {
            let (generator, public) = build_logistic(dim, n, signal, flip, l2, rng)?;
            let private = LogisticTask::new(generator.draw_many(n, rng), l2)?;
            Tasks::Logistic(public, private, vec![0.0; dim])
        }
        TaskSpec::TinyMlp {
            input,
            hidden,
            teacher_hidden,
            noise_std,
            teacher_gain,
        } => {
            let public = build_mlp(input, hidden, teacher_hidden, noise_std, teacher_gain, rng)?;
            let w0 = public.init_params(rng);
            let private = public.downstream_task(rng);
            Tasks::Mlp(public, private, w0)
        }
    })
}

macro_rules! with_tasks {
    ($tasks:expr, |$public:ident, $private:ident, $w0:ident| $body:expr) => {
        match $tasks {
            Tasks::Quadratic($public, $private, $w0) => $body,
            Tasks::Logistic($public, $private, $w0) => $body,
            Tasks::Mlp($public, $private, $w0) => $body,
        }
    };
}

fn training_config(ctx: &Context) -> Result<ContinualConfig<f64>, CliError> {
    let cfg = &ctx.config;
    let t = &cfg.train;
    let sigma = match t.sigma {
        Some(s) => s,
        None => {
            let b = &cfg.budget;
            let budget = PrivacyBudget::new(b.epsilon, b.delta)?;
            let samples = (t.steps * t.batch) as u64;
            calibrate_sigma(t.batch as u64, b.dataset_size, samples, &budget)?.sigma
        }
    };
    let out = ContinualConfig {
        optimizer: cfg.optimizer,
        steps: t.steps,
        public_batch: t.public_batch,
        private_batch: t.batch,
        rule: cfg.rule,
        sigma,
        eval_every: t.eval_every,
        val_size: t.val_size,
        track_hessian: t.track_hessian,
        hessian_probes: t.hessian_probes,
    };
    out.validate()?;
    Ok(out)
}

fn write_run(ctx: &Context, stem: &str, run: &TrainRun<f64>) -> Result<std::path::PathBuf, CliError> {
    let path = ctx.out.join(format!("{stem}.csv"));
    run.write_csv(BufWriter::new(File::create(&path)?), ctx.config.train.track_hessian)?;
    emit_svg_lineplot(&path, &["iter", "train_loss", "val_loss"], LIN_LOG)?;
    Ok(path)
}

fn run_summary(seed: u64, run: &TrainRun<f64>, path: &Path) -> String {
    let loss = run.final_val_loss().map_or_else(|| "n/a".to_string(), |l| format!("{l:.6}"));
    let mut line = format!("seed {seed}: final val loss {loss}");
    if let Some(t) = run.switch_iter {
        line.push_str(&format!(", switched at {t}"));
    }
    if let Some(reason) = &run.aborted {
        line.push_str(&format!(", aborted: {reason}"));
    }
    line.push_str(&format!(" -> {}", path.display()));
    line
}

fn train(ctx: &Context, seed: u64) -> Result<String, CliError> {
    let config = training_config(ctx)?;
    let mut rng = seeded(seed);
    let tasks = build_tasks(&ctx.config.task, &mut rng)?;
    let run = with_tasks!(tasks, |_public, private, w0| mixed_train(
        &private,
        &private,
        &w0,
        &config,
        &AlphaSchedule::OnlyPrivate,
        &mut rng
    )?);
    let path = write_run(ctx, &format!("train_seed{seed}"), &run)?;
    Ok(run_summary(seed, &run, &path))
}

fn continual(ctx: &Context, seed: u64) -> Result<String, CliError> {
    let config = training_config(ctx)?;
    let mut rng = seeded(seed);
    let tasks = build_tasks(&ctx.config.task, &mut rng)?;
    let run = with_tasks!(tasks, |public, private, w0| match &ctx.config.schedule {
        ScheduleSpec::Switch { policy } => continual_pretrain(&public, &private, &w0, &config, policy, &mut rng)?,
        ScheduleSpec::Alpha { schedule } => mixed_train(&public, &private, &w0, &config, schedule, &mut rng)?,
    });
    let path = write_run(ctx, &format!("continual_seed{seed}"), &run)?;
    Ok(run_summary(seed, &run, &path))
}

fn write_fourway(ctx: &Context, stem: &str, fw: &FourWay<f64>) -> Result<(), CliError> {
    let path = ctx.out.join(format!("{stem}.csv"));
    let mut w = csv_writer(&path)?;
    let arms = fw.arms();
    let mut header = vec!["iter"];
    header.extend(arms.iter().map(|(name, _)| *name));
    w.write_record(&header)?;
    let len = arms.iter().map(|(_, r)| r.records.len()).max().unwrap_or(0);
    for i in 0..len {
        let Some(iter) = arms.iter().find_map(|(_, r)| r.records.get(i).map(|rec| rec.iter)) else {
            continue;
        };
        let vals: Vec<Option<f64>> = arms
            .iter()
            .map(|(_, r)| r.records.get(i).and_then(|rec| rec.val_loss))
            .collect();
        if vals.iter().all(Option::is_none) {
            continue;
        }
        let mut row = vec![iter.to_string()];
        row.extend(vals.iter().map(|v| v.map(fmt).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);
    emit_svg_lineplot(&path, &header, LIN_LOG)?;
    Ok(())
}

fn fourway(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config.fourway;
    let results: Vec<(u64, [(&str, FourWay<f64>); 2])> = ctx
        .config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_, CliError> {
            let out = pretrain_contrast(cfg, seed)?;
            let pair = [("random", out.random), ("pretrained", out.pretrained)];
            for (init, fw) in &pair {
                write_fourway(ctx, &format!("fourway_seed{seed}_{init}"), fw)?;
            }
            Ok((seed, pair))
        })
        .collect::<Result<_, _>>()?;

    let path = ctx.out.join("fourway_summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "seed",
        "init",
        "sgd",
        "sgd_clip",
        "sgd_noise",
        "dp_sgd",
        "noise_gap",
        "clip_gap",
    ])?;
    let mut gaps = [0.0; 2];
    for (seed, pair) in &results {
        for (k, (init, fw)) in pair.iter().enumerate() {
            let losses = fw.final_losses()?;
            let noise_gap = fw.noise_gap()?;
            gaps[k] += noise_gap / results.len() as f64;
            let mut row = vec![seed.to_string(), init.to_string()];
            row.extend(losses.iter().map(|&l| fmt(l)));
            row.push(fmt(noise_gap));
            row.push(fmt(fw.clip_gap()?));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    println!(
        "mean noise gap: random init {:.4}, pre-trained init {:.4} -> {}",
        gaps[0],
        gaps[1],
        path.display()
    );
    Ok(())
}

fn mia(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config.mia;
    let rows: Vec<Vec<MiaRow>> = ctx
        .config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_, CliError> {
            let out = run_membership_experiment(cfg, seed)?;
            let rows = vec![
                MiaRow {
                    model_id: format!("nondp_seed{seed}"),
                    epsilon: None,
                    report: out.nondp,
                },
                MiaRow {
                    model_id: format!("dp_seed{seed}"),
                    epsilon: Some(cfg.epsilon),
                    report: out.dp,
                },
                MiaRow {
                    model_id: format!("shuffled_seed{seed}"),
                    epsilon: None,
                    report: out.shuffled,
                },
            ];
            let f = BufWriter::new(File::create(ctx.out.join(format!("mia_seed{seed}.csv")))?);
            write_mia_csv(f, &rows)?;
            Ok(rows)
        })
        .collect::<Result<_, _>>()?;
    let all: Vec<MiaRow> = rows.into_iter().flatten().collect();
    let path = ctx.out.join("mia.csv");
    let mut f = BufWriter::new(File::create(&path)?);
    write_mia_csv(&mut f, &all)?;
    f.flush()?;
    for chunk in all.chunks(3) {
        println!(
            "{}: auc {:.4} | {}: auc {:.4} | {}: auc {:.4}",
            chunk[0].model_id,
            chunk[0].report.auc,
            chunk[1].model_id,
            chunk[1].report.auc,
            chunk[2].model_id,
            chunk[2].report.auc
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
