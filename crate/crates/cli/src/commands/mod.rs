pub mod attack;
pub mod eval;
pub mod finetune;
pub mod grid;
pub mod prepare;
pub mod risk;
pub mod synth;
pub mod train;

use std::io;
use std::path::{Path, PathBuf};

use aq_core::dataset::Dataset;
use aq_core::model::TrainConfig;
use aq_core::{Error, Result};

use crate::args::Args;

/// Input-file check that fails with exit-code-2 semantics and names the path.
pub fn require_file(raw: &str) -> Result<PathBuf> {
    let path = PathBuf::from(raw);
    if !path.is_file() {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("missing input file: {}", path.display()),
        )));
    }
    Ok(path)
}

pub fn load_native(raw: &str) -> Result<Dataset> {
    aq_core::dataset::load_dataset(&require_file(raw)?)
}

/// Cap rayon's worker count when --threads is given. Results never depend on
/// the pool size (work is seeded per item and reduced in fixed order).
pub fn configure_threads(args: &Args) -> Result<()> {
    if let Some(n) = args.get_parsed::<usize>("threads")? {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Ignores the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// TrainConfig from defaults, then an optional key=value config file, then
/// flag overrides.
pub fn resolve_train_config(args: &Args, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    if let Some(path) = args.get("config") {
        let text = std::fs::read_to_string(require_file(path)?)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("{path}:{}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |k: &str| Error::Format(format!("{path}: bad value for {k}"));
            match key {
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad(key))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad(key))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad(key))?,
                "lr_gamma" => cfg.lr_gamma = value.parse().map_err(|_| bad(key))?,
                "lr_power" => cfg.lr_power = value.parse().map_err(|_| bad(key))?,
                "momentum" => cfg.momentum = value.parse().map_err(|_| bad(key))?,
                "weight_decay" => cfg.weight_decay = value.parse().map_err(|_| bad(key))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                other => {
                    return Err(Error::Format(format!("{path}: unknown config key '{other}'")))
                }
            }
        }
    }
    if let Some(v) = args.get_parsed("epochs")? {
        cfg.epochs = v;
    }
    if let Some(v) = args.get_parsed("batch")? {
        cfg.batch_size = v;
    }
    if let Some(v) = args.get_parsed("lr")? {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.get_parsed("momentum")? {
        cfg.momentum = v;
    }
    if let Some(v) = args.get_parsed("weight-decay")? {
        cfg.weight_decay = v;
    }
    if let Some(v) = args.get_parsed("seed")? {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_manifest_entries(m: &mut crate::manifest::Manifest, cfg: &TrainConfig) {
    m.push("config.epochs", cfg.epochs);
    m.push("config.batch_size", cfg.batch_size);
    m.push("config.learning_rate", cfg.learning_rate);
    m.push("config.lr_gamma", cfg.lr_gamma);
    m.push("config.lr_power", cfg.lr_power);
    m.push("config.momentum", cfg.momentum);
    m.push("config.weight_decay", cfg.weight_decay);
    m.push("config.seed", cfg.seed);
}

/// Write one image as a textual PGM (P2) raster.
pub fn write_pgm(image: &aq_core::dataset::Image, path: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let bytes = image.to_byte();
    let mut text = String::from("P2\n28 28\n255\n");
    for row in 0..28 {
        let line: Vec<String> = (0..28)
            .map(|col| format!("{}", bytes.get(row, col).round() as u32))
            .collect();
        let _ = writeln!(text, "{}", line.join(" "));
    }
    std::fs::write(path, text)?;
    Ok(())
}
