use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelKind, RunConfig};
use super::{AttackArgs, CertifyArgs, ContourArgs, DataArgs, MeshArgs, ScoreArgs, ToygenArgs, TrainArgs};
use super::{EXIT_OK, EXIT_SOUNDNESS};
use crate::attacks::{attack_report, report_csv, AttackConfig};
use crate::baseline::MlpNet;
use crate::data_io::{domain_box, load_csv, make_toy, standardize, write_csv, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{choose_level, export_obj, marching_cubes, voxelize};
use crate::lipnet::LipNet;
use crate::metrics::{certified_auroc_curve, curve_csv};
use crate::model::{AnyNet, ModelFile, Scorer, TrainingMetadata};
use crate::sampler::{derive_seed, DomainBox};
use crate::trainer::train_with_hook;

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad {what} entry '{t}'"))))
        .collect()
}

fn parse_bounds(text: Option<&str>, fallback: Option<&DomainBox>, dim: usize) -> Result<DomainBox> {
    match text {
        Some(t) => {
            let v = parse_list(t, "bounds")?;
            if v.len() != 2 * dim {
                return Err(Error::Config(format!("bounds need {} numbers, got {}", 2 * dim, v.len())));
            }
            DomainBox::new(v.iter().step_by(2).copied().collect(), v.iter().skip(1).step_by(2).copied().collect())
        }
        None => match fallback {
            Some(b) if b.dim() == dim => Ok(b.clone()),
            _ => DomainBox::symmetric(dim, crate::data_io::DEFAULT_HALF_WIDTH_SIGMAS),
        },
    }
}

fn header_has(path: &Path, column: &str) -> Result<bool> {
    let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut first = String::new();
    BufReader::new(f).read_line(&mut first)?;
    Ok(first.trim_end().split(',').any(|h| h.trim() == column))
}

struct Loaded {
    net: AnyNet,
    data: Dataset,
}

/// Model plus data mapped into the model's input coordinates.
fn load_model_and_data(io: &DataArgs) -> Result<Loaded> {
    let file = ModelFile::load(&io.model)
        .map_err(|e| Error::Data(format!("cannot load model {}: {e}", io.model.display())))?;
    let net = file.to_net()?;
    let label = header_has(&io.data, &io.label_column)?.then_some(io.label_column.as_str());
    let mut data = load_csv(&io.data, label)?;
    if let Some(stats) = &file.metadata.standardization {
        data = data.apply(stats)?;
    }
    if data.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: data.dim() });
    }
    Ok(Loaded { net, data })
}

fn labelled_split(data: &Dataset) -> Result<(Array2<f64>, Array2<f64>)> {
    if data.labels.is_none() {
        return Err(Error::Data("this command needs a label column".into()));
    }
    let (pos, neg) = (data.normals(), data.anomalies());
    if pos.nrows() == 0 || neg.nrows() == 0 {
        return Err(Error::Data("labelled data needs both normal and anomalous rows".into()));
    }
    Ok((pos, neg))
}

fn scores_of(net: &AnyNet, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(net.scores(x)?.to_vec())
}

fn warn_if_vacuous(net: &AnyNet) {
    if !net.is_lipschitz() {
        eprintln!("warning: model is not 1-Lipschitz; certified values are vacuous for it");
    }
}

pub fn train(a: &TrainArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config, &a.overrides)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    let seed = cfg.train.seed;
    let raw = match (&cfg.data.path, &cfg.data.toy) {
        (Some(p), _) => {
            let d = load_csv(p, cfg.data.label_column.as_deref())?;
            // Labels only matter for evaluation; training sees the normals.
            Dataset::new(d.name.clone(), d.normals(), None)?
        }
        (None, Some(name)) => {
            make_toy(name, cfg.data.toy_n, cfg.data.toy_noise, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)))?
        }
        (None, None) => unreachable!("validated"),
    };
    let (data, stats) = if cfg.data.standardize {
        let (d, s) = standardize(&raw)?;
        (d, Some(s))
    } else {
        (raw, None)
    };
    let domain = domain_box(&data, cfg.data.half_width_sigmas)?;
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let net = match cfg.model.kind {
        ModelKind::Lipschitz => AnyNet::Lip(LipNet::new(
            data.dim(),
            &cfg.model.hidden,
            cfg.model.activation,
            cfg.model.bjorck_iterations,
            &mut init,
        )?),
        ModelKind::Baseline => AnyNet::Baseline(MlpNet::new(data.dim(), &cfg.model.hidden, &mut init)?),
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    let meta = TrainingMetadata {
        dataset: data.name.clone(),
        seed,
        margin: cfg.train.constrained.then_some(cfg.train.hkr.margin),
        lambda: cfg.train.constrained.then_some(cfg.train.hkr.lambda),
        standardization: stats,
        domain: Some(domain.clone()),
        ..Default::default()
    };
    let checkpoint = cfg.output_dir.join("checkpoint.json");
    let mut hook = |_epoch: usize, n: &AnyNet| ModelFile::new(n, meta.clone()).save(&checkpoint);
    let (net, report) = train_with_hook(&data, net, &domain, &cfg.train, &mut hook)?;
    let meta = TrainingMetadata {
        steps: report.steps(),
        final_risk: report.final_risk(),
        train_scores: scores_of(&net, data.points.view())?,
        ..meta
    };
    ModelFile::new(&net, meta).save(&cfg.output_dir.join("model.json"))?;
    report.write_csv(&cfg.output_dir.join("report.csv"))?;
    println!(
        "trained {} steps, final risk {:.6}, grad norm mean {:.4} max {:.4}",
        report.steps(),
        report.final_risk().unwrap_or(f64::NAN),
        report.final_grad_norm_mean,
        report.final_grad_norm_max
    );
    Ok(EXIT_OK)
}

pub fn score(a: &ScoreArgs) -> Result<i32> {
    let l = load_model_and_data(&a.io)?;
    let s = scores_of(&l.net, l.data.points.view())?;
    let mut out = String::from("index,score\n");
    for (i, v) in s.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    write(&a.out, &out)?;
    Ok(EXIT_OK)
}

pub fn certify(a: &CertifyArgs) -> Result<i32> {
    let eps = parse_list(&a.eps_list, "epsilon")?;
    let l = load_model_and_data(&a.io)?;
    let (pos, neg) = labelled_split(&l.data)?;
    warn_if_vacuous(&l.net);
    let (ps, ns) = (scores_of(&l.net, pos.view())?, scores_of(&l.net, neg.view())?);
    let curve = certified_auroc_curve(&ps, &ns, &eps)?;
    write(&a.out, &curve_csv(&eps, &curve))?;
    println!("auroc {}", crate::metrics::auroc(&ps, &ns)?);
    if curve.windows(2).any(|w| w[1] > w[0]) {
        eprintln!("error: certified curve increases with epsilon");
        return Ok(EXIT_SOUNDNESS);
    }
    println!("monotone check: ok");
    Ok(EXIT_OK)
}

pub fn attack(a: &AttackArgs) -> Result<i32> {
    let eps = parse_list(&a.eps_list, "epsilon")?;
    if eps.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::Config("epsilon values must be non-negative".into()));
    }
    let l = load_model_and_data(&a.io)?;
    let (pos, neg) = labelled_split(&l.data)?;
    warn_if_vacuous(&l.net);
    let template = AttackConfig { radius_eps: 1.0, steps: a.steps, restarts: a.restarts, ..AttackConfig::new(1.0) };
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let rows = attack_report(&l.net, pos.view(), neg.view(), &eps, &template, &mut rng)?;
    write(&a.out, &report_csv(&rows))?;
    for r in &rows {
        println!(
            "eps {}: clean {:.4} certified {:.4} attacked {:.4}",
            r.epsilon, r.clean_auroc, r.certified_auroc, r.attacked_auroc
        );
    }
    if l.net.is_lipschitz() && rows.iter().any(|r| r.attacked_auroc < r.certified_auroc - 1e-9) {
        eprintln!("error: attacked AUROC fell below the certificate; this is an implementation bug");
        return Ok(EXIT_SOUNDNESS);
    }
    Ok(EXIT_OK)
}

/// Grid of `res × res` points; row `j·res + i` holds `(x_i, y_j)`.
pub fn contour_grid(b: &DomainBox, res: usize) -> Array2<f64> {
    let step = |a: usize| (b.high()[a] - b.low()[a]) / (res - 1) as f64;
    let (sx, sy) = (step(0), step(1));
    Array2::from_shape_fn((res * res, 2), |(r, a)| {
        if a == 0 {
            b.low()[0] + (r % res) as f64 * sx
        } else {
            b.low()[1] + (r / res) as f64 * sy
        }
    })
}

/// Binary 8-bit PGM, top row at the largest `y`, values mapped affinely from
/// `[min, max]` to `[0, 255]`.
pub fn pgm_bytes(values: &[f64], res: usize) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{res} {res}\n255\n").into_bytes();
    for row in 0..res {
        let j = res - 1 - row;
        for i in 0..res {
            let v = values[j * res + i];
            let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 0.0 };
            out.push(g as u8);
        }
    }
    out
}

pub fn contour(a: &ContourArgs) -> Result<i32> {
    let file = ModelFile::load(&a.model)?;
    let net = file.to_net()?;
    if net.input_dim() != 2 {
        return Err(Error::Data(format!("contour needs a 2D model, this one takes {} inputs", net.input_dim())));
    }
    if a.resolution < 2 {
        return Err(Error::Config("resolution must be at least 2".into()));
    }
    let b = parse_bounds(a.bounds.as_deref(), file.metadata.domain.as_ref(), 2)?;
    let res = a.resolution;
    let grid = contour_grid(&b, res);
    let s = scores_of(&net, grid.view())?;
    let mut csv = String::from("i,j,x,y,score\n");
    for (r, v) in s.iter().enumerate() {
        csv.push_str(&format!("{},{},{},{},{v}\n", r % res, r / res, grid[[r, 0]], grid[[r, 1]]));
    }
    write(&a.out.with_extension("csv"), &csv)?;
    let pgm = a.out.with_extension("pgm");
    if let Some(dir) = pgm.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&pgm, pgm_bytes(&s, res))?;
    Ok(EXIT_OK)
}

pub fn mesh(a: &MeshArgs) -> Result<i32> {
    let file = ModelFile::load(&a.model)?;
    let net = file.to_net()?;
    if net.input_dim() != 3 {
        return Err(Error::Data(format!("mesh needs a 3D model, this one takes {} inputs", net.input_dim())));
    }
    let level = choose_level(&file.metadata.train_scores, a.percentile)
        .map_err(|e| Error::Data(format!("cannot choose a level from the stored train scores: {e}")))?;
    let b = parse_bounds(a.bounds.as_deref(), file.metadata.domain.as_ref(), 3)?;
    let grid = voxelize(&net, &b, [a.resolution; 3])?;
    let mesh = marching_cubes(&grid, level)?;
    if mesh.is_empty() {
        eprintln!("warning: level {level} does not cross the grid; writing an empty mesh");
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    export_obj(&mesh, &a.out)?;
    println!("level {level}: {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
    Ok(EXIT_OK)
}

pub fn toygen(a: &ToygenArgs) -> Result<i32> {
    let d = make_toy(&a.name, a.n, a.noise, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(&d, &a.out)?;
    Ok(EXIT_OK)
}
