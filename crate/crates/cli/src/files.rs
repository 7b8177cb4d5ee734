use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

use sepdiff_core::prior::Example;
use sepdiff_core::signal::load_wav;

fn is_wav(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn sorted_entries(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    out.sort();
    Ok(out)
}

/// WAVs directly under `dir` are unlabeled; WAVs one level down take their
/// subdirectory's name as label.
pub fn load_dataset(dir: &Path, rate: u32) -> anyhow::Result<Vec<Example>> {
    let mut data = Vec::new();
    for entry in sorted_entries(dir)? {
        if is_wav(&entry) {
            data.push(Example {
                signal: load_wav(&entry, rate)?.samples,
                label: None,
            });
        } else if entry.is_dir() {
            let label = entry.file_name().map(|n| n.to_string_lossy().into_owned());
            for file in sorted_entries(&entry)?.into_iter().filter(|p| is_wav(p)) {
                data.push(Example {
                    signal: load_wav(&file, rate)?.samples,
                    label: label.clone(),
                });
            }
        }
    }
    Ok(data)
}

/// `s1.wav`, `s2.wav`, ... in index order, stopping at the first gap.
pub fn source_files(dir: &Path) -> Vec<PathBuf> {
    (1..)
        .map(|k| dir.join(format!("s{k}.wav")))
        .take_while(|p| p.is_file())
        .collect()
}

/// Subdirectories of `root`, sorted by name.
pub fn subdirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    Ok(sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect())
}

pub fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
