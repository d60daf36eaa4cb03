//! Output staging: every artifact path is registered before writing so a
//! failed run can remove its partial outputs.

use std::cell::RefCell;
use std::path::PathBuf;

use anyhow::{Context, Result};

pub struct Outputs {
    dir: PathBuf,
    registered: RefCell<Vec<PathBuf>>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir, registered: RefCell::new(Vec::new()) })
    }

    /// Register and return the path of an artifact about to be written.
    pub fn path(&self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.registered.borrow_mut().push(path.clone());
        path
    }

    pub fn remove_partial(&self) {
        for path in self.registered.borrow().iter() {
            let _ = std::fs::remove_file(path);
        }
    }
}
