//! Flat-directory persistence: `sketches/<name>.json` and `runs/<name>/`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use dualsmoke_core::guide::SketchDoc;

use crate::run::{valid_name, Run, RunError, RunRecord};

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Store> {
        let root = root.into();
        fs::create_dir_all(root.join("sketches"))?;
        fs::create_dir_all(root.join("runs"))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sketch_path(&self, name: &str) -> PathBuf {
        self.root.join("sketches").join(format!("{name}.json"))
    }

    pub fn run_path(&self, name: &str) -> PathBuf {
        self.root.join("runs").join(name)
    }

    pub fn save_sketch(&self, name: &str, doc: &SketchDoc) -> io::Result<()> {
        let path = self.sketch_path(name);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, doc.to_json())?;
        fs::rename(tmp, path)
    }

    pub fn load_sketch(&self, name: &str) -> Option<SketchDoc> {
        let text = fs::read_to_string(self.sketch_path(name)).ok()?;
        SketchDoc::from_json(&text).ok()
    }

    fn names(dir: &Path, want_dir: bool) -> Vec<String> {
        let mut out: Vec<String> = fs::read_dir(dir)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let p = e.path();
                if want_dir {
                    p.is_dir().then(|| e.file_name().to_string_lossy().into_owned())
                } else {
                    (p.extension()? == "json").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
                }
            })
            .filter(|n| valid_name(n))
            .collect();
        out.sort();
        out
    }

    pub fn sketch_names(&self) -> Vec<String> {
        Store::names(&self.root.join("sketches"), false)
    }

    pub fn run_names(&self) -> Vec<String> {
        Store::names(&self.root.join("runs"), true)
    }

    pub fn load_run(&self, name: &str) -> Result<RunRecord, RunError> {
        Run::load_record(&self.run_path(name))
    }
}
