pub mod evaluate;
pub mod generate;
pub mod score;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::Context as _;
use lrexplain_core::data::{parse_manifest, Manifest};

pub fn read_manifest(path: &Path) -> anyhow::Result<Manifest> {
    parse_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}
