//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Runs as a plain binary so the report is always printed; exits non-zero
//! when any criterion fails.

use std::f64::consts::{LN_2, PI};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use aegan_core::audio::{build_manifest, DatasetManifest, mix_at_snr, read_wav, write_wav, Split, SplitRule};
use aegan_core::autodiff::check::gradient_error;
use aegan_core::autodiff::{AdamConfig, Bound, NormKind, ParamStore, Tape, Tensor, Var};
use aegan_core::inverse::{interior_sdr, ls_istft};
use aegan_core::metrics::{evaluate, EvalOptions};
use aegan_core::models::{save_checkpoint, CasNet, CasNetConfig, ModelMeta, ModelParams, Norm, UBlockConfig};
use aegan_core::pipeline::{grid_pairs, Denoiser};
use aegan_core::synth::{colored_noise, speech_like, write_toy_corpus, NoiseColor, ToyCorpusConfig};
use aegan_core::tfr::{adjust_length, compute_overlap, stft_embed, StftConfig, Waveform};
use aegan_core::train::{
    adv_loss_d, grid_l1, l1_loss, load_grid_pairs, perceptual_loss, train, Batch, GenLossForm, LossWeights,
    TrainConfig, Trainer, TrainOutcome,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator and discriminator width for the two toy runs.
const TOY_BASE_CHANNELS: usize = 16;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::from_samples(v).unwrap()
}

/// Sum of random sinusoids below 7.8 kHz.
fn band_limited(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| (rng.random_range(50.0..7800.0), rng.random_range(0.01..0.2), rng.random_range(0.0..2.0 * PI)))
        .collect();
    (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            parts.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum()
        })
        .collect()
}

fn overlap_arithmetic() -> Outcome {
    let start = Instant::now();
    let cfg = StftConfig::default();
    let (s, n) = (cfg.window_len, cfg.n_time);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..1000 {
        let len = rng.random_range(512..=98_304);
        let o = compute_overlap(len, &cfg).unwrap();
        let adjusted = adjust_length(&wave(vec![0.0; len]), o, &cfg).unwrap().len();
        let frames = (adjusted - s) / (s - o) + 1;
        if frames != n || (adjusted - s) % (s - o) != 0 || adjusted != n * (s - o) + o {
            bad += 1;
        }
    }
    let examples = [(16_000, 449), (64_000, 262), (98_304, 128)];
    let examples_ok = examples.iter().all(|&(l, o)| compute_overlap(l, &cfg) == Ok(o));
    let secs = start.elapsed().as_secs_f64();
    verdict(
        bad == 0 && examples_ok && secs < 1.0,
        format!("{bad}/1000 violations, examples {examples_ok}, {secs:.3} s"),
    )
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    for i in 0..50 {
        let o = 128 + i * (448 - 128) / 49;
        let x = band_limited(&mut rng, cfg.n_time * (cfg.window_len - o));
        let g = stft_embed(&wave(x.clone()), &cfg).unwrap();
        let y = ls_istft(&g.magnitude, &g.phase, g.overlap, &cfg).unwrap();
        worst = worst.min(interior_sdr(&x, y.samples(), cfg.window_len).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst >= 40.0 && secs < 30.0, format!("worst interior SDR {worst:.1} dB, {secs:.1} s"))
}

fn mixer_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let clean = wave(band_limited(&mut rng, 16_000 + 1000 * trial));
        let noise = wave(colored_noise(&mut rng, 48_000, NoiseColor::Pink));
        for snr in [0.0, 5.0, 10.0] {
            let offset = rng.random_range(0..30_000);
            let mixed = mix_at_snr(&clean, &noise, snr, offset).unwrap();
            let pc: f64 = clean.samples().iter().map(|v| v * v).sum();
            let pn: f64 = mixed.samples().iter().zip(clean.samples()).map(|(m, c)| (m - c) * (m - c)).sum();
            worst = worst.max((10.0 * (pc / pn).log10() - snr).abs());
        }
    }
    verdict(worst < 1e-6, format!("worst SNR error {worst:.2e} dB"))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Op = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

fn autodiff() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s: &[usize] = &[2, 3, 4, 4];
    let ops: Vec<(&str, Vec<&[usize]>, Op)> = vec![
        ("add", vec![s, s], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("sub", vec![s, s], Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
        ("mul", vec![s, s], Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        ("scale", vec![s], Box::new(|t, v| t.scale(v[0], 1.7))),
        ("add_scalar", vec![s], Box::new(|t, v| t.add_scalar(v[0], -0.4))),
        ("abs", vec![s], Box::new(|t, v| t.abs(v[0]))),
        ("log", vec![s], Box::new(|t, v| {
            let a = t.abs(v[0]);
            t.log(a)
        })),
        ("clamp", vec![s], Box::new(|t, v| t.clamp(v[0], -0.55, 0.45))),
        ("relu", vec![s], Box::new(|t, v| t.relu(v[0]))),
        ("leaky_relu", vec![s], Box::new(|t, v| t.leaky_relu(v[0], 0.2))),
        ("tanh", vec![s], Box::new(|t, v| t.tanh(v[0]))),
        ("sigmoid", vec![s], Box::new(|t, v| t.sigmoid(v[0]))),
        ("sum", vec![s], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![s], Box::new(|t, v| t.mean(v[0]))),
        ("concat", vec![s, &[2, 1, 4, 4]], Box::new(|t, v| t.concat_channels(v[0], v[1]).unwrap())),
        ("instance_norm", vec![s], Box::new(|t, v| t.normalize(v[0], NormKind::Instance, 1e-5).unwrap())),
        ("batch_norm", vec![s], Box::new(|t, v| t.normalize(v[0], NormKind::Batch, 1e-5).unwrap())),
        ("conv2d", vec![&[2, 3, 8, 8], &[4, 3, 4, 4], &[4]], Box::new(|t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap()
        })),
        ("conv_transpose2d", vec![&[2, 3, 4, 4], &[3, 2, 4, 4], &[2]], Box::new(|t, v| {
            t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1).unwrap()
        })),
    ];
    let mut worst = (0.0, "");
    for (name, shapes, f) in &ops {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|sh| random_tensor(&mut rng, sh)).collect();
        let e = gradient_error(&inputs, |sh| random_tensor(&mut rng, sh), f, 1e-6);
        if e > worst.0 {
            worst = (e, name);
        }
    }

    let net = CasNet::new(CasNetConfig {
        n_blocks: 1,
        ublock: UBlockConfig {
            depth: 3,
            base_channels: 2,
            norm: Norm::Instance,
        },
    })
    .unwrap();
    let template: ParamStore<f64> = net.layout().init(&mut rng);
    let mut inputs = vec![random_tensor(&mut rng, &[1, 1, 16, 16])];
    inputs.extend(template.iter().map(|(_, t)| random_tensor(&mut rng, t.shape())));
    let ublock = gradient_error(
        &inputs,
        |sh| random_tensor(&mut rng, sh),
        |tape, vars| {
            let bound = Bound::from_vars(vars[1..].to_vec());
            net.forward(tape, &bound, vars[0]).unwrap()
        },
        1e-6,
    );

    let mut adjoint: f64 = 0.0;
    for (stride, pad, k) in [(2, 1, 4), (1, 0, 3), (2, 0, 2)] {
        let x = random_tensor(&mut rng, &[2, 3, 8, 8]);
        let w = random_tensor(&mut rng, &[5, 3, k, k]);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w));
        let cx = tape.conv2d(xv, wv, None, stride, pad).unwrap();
        let y = random_tensor(&mut rng, tape.shape(cx));
        let yv = tape.constant(y.clone());
        let ty = tape.conv_transpose2d(yv, wv, None, stride, pad).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(tape.value(cx).data(), y.data());
        let rhs = dot(x.data(), tape.value(ty).data());
        adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    verdict(
        worst.0 < 1e-5 && ublock < 1e-5 && adjoint < 1e-6,
        format!(
            "{} ops, worst {:.1e} ({}), depth-3 U-block {ublock:.1e}, adjoint {adjoint:.1e}",
            ops.len(),
            worst.0,
            worst.1
        ),
    )
}

fn loss_values() -> Outcome {
    let t = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).unwrap();
    let d = adv_loss_d(0.5, 0.5).unwrap();
    let x = t(&[0.3, -0.2, 0.9]);
    let l1 = l1_loss(&x, &x).unwrap();
    let feats = vec![t(&[0.1, 0.2]), t(&[1.0, -2.0])];
    let same = perceptual_loss(&feats, &feats, &[0.5, 0.5]).unwrap();
    let real = vec![t(&[0.0, 0.0]), t(&[0.0, 0.0])];
    let fake = vec![t(&[0.1, -0.1]), t(&[0.4, -0.4])];
    let weighted = perceptual_loss(&real, &fake, &[2.0, 1.0]).unwrap();
    verdict(
        (d - 2.0 * LN_2).abs() <= 1e-9 && l1 == 0.0 && same == 0.0 && (weighted - 0.6).abs() <= 1e-9,
        format!("adv_d {d:.12}, l1 {l1}, perceptual {same}, weighted {weighted:.12}"),
    )
}

fn supervised_overfit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let clean = wave(speech_like(&mut rng, 6000, 150.0));
    let noise = wave(colored_noise(&mut rng, 6000, NoiseColor::Pink));
    let noisy = mix_at_snr(&clean, &noise, 5.0, 0).unwrap();
    let meta = ModelMeta::for_grid(64);
    let pairs = grid_pairs(&clean, &noisy, &meta.stft, meta.floor_db).unwrap();
    let batch = Batch::from_pairs(&[&pairs[0]]).unwrap();
    let n = meta.discriminator.n_feature_layers;
    let params = ModelParams::init(meta).unwrap();
    let weights = LossWeights::with(0.0, 1.0, 0.0, n);
    let mut trainer = Trainer::new(params, weights, AdamConfig::default(), GenLossForm::default()).unwrap();
    let initial = trainer.train_step(&batch).unwrap().loss_g_l1;
    for _ in 1..200 {
        trainer.train_step(&batch).unwrap();
    }
    let last = l1_loss(&batch.clean, &trainer.generate(&batch.noisy).unwrap()).unwrap();
    let ratio = last / initial;
    verdict(ratio < 0.2, format!("L1 {initial:.4} -> {last:.4} ({:.1}% of initial)", 100.0 * ratio))
}

struct ToyRun {
    outcome: TrainOutcome,
    dir: tempfile::TempDir,
}

fn toy_run(manifest: &DatasetManifest) -> ToyRun {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        base_channels: TOY_BASE_CHANNELS,
        out_dir: Some(dir.path().to_path_buf()),
        ..TrainConfig::default()
    };
    let weights = LossWeights::default_for(cfg.model_meta().discriminator.n_feature_layers);
    let outcome = train(manifest, &cfg, &weights).unwrap();
    ToyRun { outcome, dir }
}

fn toy_adversarial(run: &ToyRun, manifest: &DatasetManifest, secs: f64) -> Outcome {
    let params = &run.outcome.params;
    let pairs = load_grid_pairs(manifest, Split::Test, &params.meta, params.meta.seed).unwrap();
    let (l1_den, l1_noisy) = grid_l1(params, &pairs).unwrap();
    let opts = EvalOptions {
        seed: params.meta.seed,
        split: Some(Split::Test),
    };
    let noisy = evaluate(manifest, None, opts).overall().unwrap();
    let denoiser = Denoiser::from_model(params).unwrap();
    let denoised = evaluate(manifest, Some(&denoiser), opts).overall().unwrap();
    let last = run.outcome.log.last().unwrap();
    let in_range = |v: f64| v > 0.05 && v < 0.95;
    verdict(
        l1_den < l1_noisy && denoised.stoi > noisy.stoi && in_range(last.d_real) && in_range(last.d_fake),
        format!(
            "L1 {l1_den:.4} vs noisy {l1_noisy:.4}; STOI {:.4} vs noisy {:.4}; D(real) {:.3}, D(fake) {:.3}; {:.0} s",
            denoised.stoi, noisy.stoi, last.d_real, last.d_fake, secs
        ),
    )
}

fn determinism(a: &ToyRun, b: &ToyRun) -> Outcome {
    let mut names: Vec<_> = fs::read_dir(a.dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| fs::read(a.dir.path().join(n)).ok() != fs::read(b.dir.path().join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    verdict(
        differing.is_empty() && names.len() > 1,
        format!("{} files compared, differing: {differing:?}", names.len()),
    )
}

/// Noisy-baseline STOI on a user-supplied corpus, e.g.
/// `AEGAN_CLEAN_DIR=timit/test AEGAN_NOISE_DIR=qut/speech`.
fn corpus_baseline() -> Outcome {
    let (Ok(clean), Ok(noise)) = (std::env::var("AEGAN_CLEAN_DIR"), std::env::var("AEGAN_NOISE_DIR")) else {
        return Outcome::Skip("set AEGAN_CLEAN_DIR and AEGAN_NOISE_DIR to a TIMIT / QUT-TIMIT corpus".into());
    };
    let manifest = match build_manifest(Path::new(&clean), Path::new(&noise), &[0.0, 5.0, 10.0], SplitRule::All(Split::Test)) {
        Ok(m) => m,
        Err(e) => return Outcome::Fail(format!("manifest: {e}")),
    };
    let report = evaluate(&manifest, None, EvalOptions { seed: 0, split: None });
    let targets = [(0.0, 0.65), (5.0, 0.77), (10.0, 0.86)];
    let mut lines = Vec::new();
    let mut ok = true;
    for (snr, want) in targets {
        let scores: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.snr_db == snr)
            .filter_map(|r| r.result.as_ref().ok().map(|s| s.stoi))
            .collect();
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        ok &= !scores.is_empty() && (mean - want).abs() <= 0.05;
        lines.push(format!("{snr} dB {mean:.3} (want {want})"));
    }
    verdict(ok, lines.join(", "))
}

fn cli_contract() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_aegan");
    let model = dir.path().join("init.aegan");
    save_checkpoint(&ModelParams::init(ModelMeta::for_grid(256)).unwrap(), &model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let input = dir.path().join("in.wav");
    write_wav(&input, &wave(speech_like(&mut rng, 7 * 16_000, 140.0))).unwrap();
    let out = dir.path().join("out.wav");
    let p = |x: &Path| x.to_str().unwrap().to_owned();
    let status = Command::new(bin)
        .args(["denoise", "--in", &p(&input), "--model", &p(&model), "--out", &p(&out)])
        .status()
        .unwrap();
    let out_len = read_wav(&out).map(|w| w.len()).unwrap_or(0);

    let short = dir.path().join("short.wav");
    write_wav(&short, &wave(speech_like(&mut rng, 22_400, 140.0))).unwrap();
    let render = |name: &str| {
        let png = dir.path().join(name);
        Command::new(bin)
            .args(["spectrogram", "--in", &p(&short), "--out", &p(&png)])
            .status()
            .unwrap();
        fs::read(png).unwrap_or_default()
    };
    let (a, b) = (render("a.png"), render("b.png"));
    verdict(
        status.success() && out_len == 112_000 && !a.is_empty() && a == b,
        format!("7 s in -> {out_len} samples out; PNG {} bytes, identical {}", a.len(), a == b),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "overlap arithmetic", overlap_arithmetic()),
        (2, "round-trip fidelity", round_trip()),
        (3, "mixer accuracy", mixer_accuracy()),
        (4, "autodiff correctness", autodiff()),
        (5, "loss unit values", loss_values()),
        (6, "supervised sanity", supervised_overfit()),
    ];

    let corpus = tempfile::tempdir().unwrap();
    let manifest = write_toy_corpus(corpus.path(), &ToyCorpusConfig::default()).unwrap();
    let start = Instant::now();
    let first = toy_run(&manifest);
    let secs = start.elapsed().as_secs_f64();
    results.push((7, "toy adversarial run", toy_adversarial(&first, &manifest, secs)));
    let second = toy_run(&manifest);
    results.push((8, "determinism", determinism(&first, &second)));

    results.push((9, "corpus baseline STOI", corpus_baseline()));
    results.push((10, "CLI contract", cli_contract()));

    let mut failed = 0;
    for (id, name, outcome) in &results {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id:>2} {tag} {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
