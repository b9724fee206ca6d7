use std::fs;
use std::path::{Path, PathBuf};

use fiqa_core::trainer::TrainConfig;
use serde::Serialize;

use crate::failure::Failure;

/// Environment variable naming the directory of pretrained backbone files.
pub const WEIGHTS_ENV: &str = "FIQA_WEIGHTS_DIR";

/// The config file: one flat table holding the artifact paths next to every
/// [`TrainConfig`] key. Relative paths are taken from the file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunFile {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let mut run = match path {
            None => RunFile::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Failure::config(format!("cannot read config {}: {e}", p.display())))?;
                let mut run =
                    RunFile::parse(&text).map_err(|e| Failure::config(format!("config {}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                for slot in [&mut run.manifest, &mut run.out, &mut run.checkpoints, &mut run.train.weights_dir] {
                    if let Some(rel) = slot.as_ref().filter(|q| q.is_relative()) {
                        *slot = Some(base.join(rel));
                    }
                }
                run
            }
        };
        if run.train.weights_dir.is_none() {
            run.train.weights_dir = std::env::var_os(WEIGHTS_ENV).map(PathBuf::from);
        }
        Ok(run)
    }

    /// Split the path keys off and read everything else strictly as a
    /// [`TrainConfig`], so misspelled keys are errors.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| e.message().to_string())?;
        let mut path = |key: &str| match table.remove(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(v) => Err(format!("`{key}` must be a string path, got {}", v.type_str())),
        };
        let (manifest, out, checkpoints) = (path("manifest")?, path("out")?, path("checkpoints")?);
        let train = table.try_into().map_err(|e: toml::de::Error| e.message().to_string())?;
        Ok(RunFile {
            manifest,
            out,
            checkpoints,
            train,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.train.validate().map_err(Failure::from)
    }

    pub fn require_manifest(&self) -> Result<&Path, Failure> {
        let p = self
            .manifest
            .as_deref()
            .ok_or_else(|| Failure::config("no manifest given (--manifest or `manifest` in the config)"))?;
        if !p.is_file() {
            return Err(Failure::config(format!("manifest {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn require_out(&self) -> Result<&Path, Failure> {
        self.out
            .as_deref()
            .ok_or_else(|| Failure::config("no output path given (--out or `out` in the config)"))
    }

    pub fn require_checkpoints(&self) -> Result<&Path, Failure> {
        let p = self
            .checkpoints
            .as_deref()
            .ok_or_else(|| Failure::config("no checkpoints given (--checkpoints or `checkpoints` in the config)"))?;
        if !p.exists() {
            return Err(Failure::config(format!("checkpoints {} do not exist", p.display())));
        }
        Ok(p)
    }
}
