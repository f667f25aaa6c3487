use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::store::{self, RESOLVED_CONFIG};
use super::{BuildDatasetArgs, Config, EvaluateArgs, ExportArgs, Failure, GenPhantomsArgs, Method, ReconstructArgs, TrainArgs};
use crate::formats::{load_nimg, save_nimg, save_pgm};
use crate::metrics::{format_table, write_table_csv, MetricsRow};
use crate::network::{load_checkpoint, min_constrained, save_checkpoint, ConstraintPlan};
use crate::phantom::{load_image, phantom_seed, random_phantom};
use crate::solvers::{inett_solve, nett_solve, sit_solve, NetworkPenalty, Status};
use crate::tensor::Tensor;
use crate::tomo::ProjectionOperator;
use crate::training::{self, DatasetConfig};
use crate::unet::{build_convex_unet, build_regularizer, build_unet, unet_spec};

type CmdResult = Result<(), Failure>;

/// `--config` if given, else `fallback` if it exists, else the defaults.
fn resolve_config(explicit: Option<&Path>, fallback: Option<PathBuf>) -> Result<Config, Failure> {
    let path = match (explicit, fallback) {
        (Some(p), _) => {
            require(p)?;
            p.to_path_buf()
        }
        (None, Some(p)) if p.exists() => p,
        _ => return Ok(Config::default()),
    };
    Ok(Config::parse(&fs::read_to_string(&path)?)?)
}

fn require(path: &Path) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure { code: 2, message: format!("{}: no such file", path.display()) })
    }
}

fn log_config(cfg: &Config, path: &Path) -> CmdResult {
    let text = cfg.to_text();
    fs::write(path, &text)?;
    eprintln!("# resolved config ({})\n{text}", path.display());
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_parent(path: &Path) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CmdResult {
    create_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn gen_phantoms(a: &GenPhantomsArgs) -> CmdResult {
    if a.n == 0 {
        return Err(Failure::usage("--n must be positive"));
    }
    if a.min_ellipses == 0 || a.min_ellipses > a.max_ellipses {
        return Err(Failure::usage("need 1 <= --min-ellipses <= --max-ellipses"));
    }
    fs::create_dir_all(&a.out_dir)?;
    let mut seeds = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let seed = phantom_seed(a.seed, i);
        let img = random_phantom(a.n, (a.min_ellipses, a.max_ellipses), seed);
        save_nimg(a.out_dir.join(store::phantom_file(i)), &img)?;
        seeds.push(seed);
    }
    store::write_phantom_manifest(&a.out_dir, &seeds)?;
    let mut cfg = Config::default();
    cfg.set_image_size(a.n);
    log_config(&cfg, &a.out_dir.join(RESOLVED_CONFIG))?;
    eprintln!("wrote {} phantoms to {}", a.count, a.out_dir.display());
    Ok(())
}

pub fn build_dataset(a: &BuildDatasetArgs) -> CmdResult {
    if !(a.noise_max >= 0.0 && a.noise_max.is_finite()) {
        return Err(Failure::usage("--noise-max must be a finite nonnegative number"));
    }
    let mut cfg = resolve_config(a.config.as_deref(), Some(a.phantoms.join(RESOLVED_CONFIG)))?;
    if let Some(g) = &a.geometry {
        let (d, v) = super::Geometry::parse_dims(g).ok_or_else(|| Failure::usage(format!("--geometry expects DETxVIEWS, got `{g}`")))?;
        cfg.geometry.detectors = d;
        cfg.geometry.views = v;
    }
    require(&a.phantoms.join(store::MANIFEST))?;
    let mut phantoms = Vec::new();
    for p in store::phantom_paths(&a.phantoms)? {
        let img: Tensor<f64> = load_nimg(&p)?;
        phantoms.push(img);
    }
    if let Some(first) = phantoms.first() {
        let n = first.shape()[0];
        if phantoms.iter().any(|p| p.shape() != [n, n]) {
            return Err(crate::Error::invalid("build-dataset", "phantoms must be square and share one size").into());
        }
        cfg.set_image_size(n);
    }
    let g = cfg.geometry;
    let op = ProjectionOperator::new(g.n, g.detectors, g.views)?;
    let dcfg = DatasetConfig {
        n1: a.n1,
        n2: a.n2,
        noise_range: (0.0, a.noise_max),
        art_rounds: cfg.solver.art_rounds,
        seed: a.seed,
    };
    let ds = training::build_dataset(&phantoms, &op, &dcfg)?;
    store::save_dataset(&a.out, &ds)?;
    log_config(&cfg, &a.out.join(RESOLVED_CONFIG))?;
    eprintln!(
        "wrote {} samples ({} train, {} validation, {} test) to {}",
        ds.len(),
        ds.split.train.len(),
        ds.split.validation.len(),
        ds.split.test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> CmdResult {
    require(&a.dataset.join(store::MANIFEST))?;
    let ds = store::load_dataset(&a.dataset)?;
    let mut cfg = resolve_config(a.config.as_deref(), Some(a.dataset.join(RESOLVED_CONFIG)))?;
    if let Some(s) = ds.samples.first() {
        cfg.set_image_size(s.z.shape()[0]);
    }
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.training.seed = s;
    }
    if a.convex {
        cfg.convex = true;
    }
    if a.unconstrained {
        cfg.convex = false;
    }
    if let Some(k) = a.checkpoint_every {
        cfg.checkpoint_every = k;
    }
    if ds.split.train.is_empty() {
        return Err(crate::Error::invalid("train", "the dataset has no training samples").into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    rng.set_stream(1);
    let (spec, mut params, plan) = if cfg.convex {
        build_convex_unet::<f64, _>(&cfg.unet, &mut rng)?
    } else {
        let (s, p) = build_unet::<f64, _>(&cfg.unet, &mut rng)?;
        (s, p, ConstraintPlan::empty())
    };
    create_parent(&a.out_checkpoint)?;
    log_config(&cfg, &with_suffix(&a.out_checkpoint, ".cfg"))?;

    let every = cfg.checkpoint_every;
    let ckpt = a.out_checkpoint.clone();
    let history = training::train(&spec, &mut params, &plan, &ds, &cfg.training, |rec, p| {
        match rec.val_loss {
            Some(v) => eprintln!("epoch {:4}  train {:.6e}  val {:.6e}", rec.epoch, rec.mean_train_loss, v),
            None => eprintln!("epoch {:4}  train {:.6e}", rec.epoch, rec.mean_train_loss),
        }
        if every > 0 && rec.epoch % every == 0 {
            save_checkpoint(with_suffix(&ckpt, &format!(".epoch{:04}", rec.epoch)), p)?;
        }
        Ok(())
    })?;
    training::finalize(&spec, &mut params, &ds)?;
    save_checkpoint(&a.out_checkpoint, &params)?;
    let hist_path = a.history.clone().unwrap_or_else(|| with_suffix(&a.out_checkpoint, ".history.csv"));
    write_csv_file(&hist_path, |w| history.write_csv(w))?;
    if cfg.convex {
        eprintln!("smallest constrained entry: {:e}", min_constrained(&params, &plan)?);
    }
    eprintln!("wrote {} and {}", a.out_checkpoint.display(), hist_path.display());
    Ok(())
}

pub fn reconstruct(a: &ReconstructArgs) -> CmdResult {
    let needs_net = matches!(a.method, Method::Inett | Method::Nett);
    if needs_net && a.checkpoint.is_none() {
        return Err(Failure::usage(format!("--method {:?} requires --checkpoint", a.method).to_lowercase()));
    }
    if matches!(a.method, Method::Inett | Method::Sit) && a.delta.is_none() {
        return Err(Failure::usage("--delta is required for inett and sit"));
    }
    if a.method == Method::Nett && a.alpha.is_none() {
        return Err(Failure::usage("--method nett requires --alpha (for example 0.001, 0.01, 0.05 or 0.1)"));
    }

    require(&a.sinogram)?;
    let y: Tensor<f64> = load_nimg(&a.sinogram)?;
    let &[det, views] = y.shape() else {
        return Err(crate::Error::shape("reconstruct", "[detectors, views] sinogram", format!("{:?}", y.shape())).into());
    };
    let sidecar = match &a.checkpoint {
        Some(c) => with_suffix(c, ".cfg"),
        None => a.sinogram.with_file_name(RESOLVED_CONFIG),
    };
    let mut cfg = resolve_config(a.config.as_deref(), Some(sidecar))?;
    if let Some(n) = a.n {
        cfg.set_image_size(n);
    }
    cfg.geometry.detectors = det;
    cfg.geometry.views = views;
    if let Some(t) = a.tau {
        cfg.solver.tau = t;
    }
    create_parent(&a.out)?;
    log_config(&cfg, &with_suffix(&a.out, ".cfg"))?;

    let op = ProjectionOperator::new(cfg.geometry.n, det, views)?;
    let x0 = op.uniform_image();
    let hist_path = a.history.clone().unwrap_or_else(|| with_suffix(&a.out, ".history.csv"));
    let mut status = None;
    let x = match a.method {
        Method::Art => op.pseudo_inverse(&y, cfg.solver.art_rounds)?,
        Method::Sit => {
            let res = sit_solve(&op, &y, a.delta.unwrap_or_default(), &x0, &cfg.solver.sit())?;
            write_csv_file(&hist_path, |w| res.write_csv(w))?;
            status = Some(res.status);
            res.x
        }
        Method::Inett | Method::Nett => {
            let ckpt = a.checkpoint.as_deref().unwrap_or(Path::new(""));
            require(ckpt)?;
            let params = load_checkpoint::<f64>(ckpt)?;
            let spec = unet_spec(&cfg.unet)?;
            if a.method == Method::Inett {
                if !cfg.convex {
                    return Err(crate::Error::invalid("reconstruct", "iNETT needs a network trained with the convexity constraints").into());
                }
                let u = &cfg.unet;
                let reg = build_regularizer(&spec, &params, u.a, u.p, u.q)?;
                let res = inett_solve(&reg, &op, &y, a.delta.unwrap_or_default(), &x0, &cfg.solver.inett())?;
                write_csv_file(&hist_path, |w| res.write_csv(w))?;
                status = Some(res.status);
                res.x
            } else {
                let penalty = NetworkPenalty { spec: &spec, params: &params };
                let alpha = a.alpha.unwrap_or_default();
                let (x, rep) = nett_solve(&penalty, &op, &y, alpha, &cfg.solver.inner, &x0)?;
                write_csv_file(&hist_path, |w| {
                    writeln!(w, "iter,objective")?;
                    for (i, f) in rep.objectives.iter().enumerate() {
                        writeln!(w, "{i},{f:e}")?;
                    }
                    Ok(())
                })?;
                x
            }
        }
    };
    save_nimg(&a.out, &x)?;
    if let Some(p) = &a.pgm {
        create_parent(p)?;
        save_pgm(p, &x, false)?;
    }
    match status {
        Some(Status::MaxIterations) => Err(Failure::numerical(format!(
            "discrepancy principle not met within n_max = {}; last iterate written to {}",
            cfg.solver.n_max,
            a.out.display()
        ))),
        Some(Status::Stopped(n)) => {
            eprintln!("stopped at n = {n}; wrote {}", a.out.display());
            Ok(())
        }
        None => {
            eprintln!("wrote {}", a.out.display());
            Ok(())
        }
    }
}

pub fn evaluate(a: &EvaluateArgs) -> CmdResult {
    require(&a.truth)?;
    let truth = load_image(&a.truth)?;
    let mut rows = Vec::with_capacity(a.recon.len());
    for item in &a.recon {
        let (label, path) = match item.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(item);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| item.clone());
                (stem, p)
            }
        };
        require(&path)?;
        let x = load_image(&path)?;
        rows.push(MetricsRow::evaluate(label, &x, &truth)?);
    }
    print!("{}", format_table(&rows));
    if let Some(out) = &a.out_table {
        write_csv_file(out, |w| write_table_csv(&rows, w))?;
    }
    Ok(())
}

pub fn export(a: &ExportArgs) -> CmdResult {
    require(&a.input)?;
    let img = load_image(&a.input)?;
    create_parent(&a.out)?;
    save_pgm(&a.out, &img, a.normalize)?;
    Ok(())
}
