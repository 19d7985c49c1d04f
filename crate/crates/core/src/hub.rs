//! Resolution of model identifiers to local directories. Nothing is
//! downloaded: identifiers must point at files already on disk.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable naming a directory of `<org>/<name>` model folders.
pub const MODEL_CACHE_ENV: &str = "MAPLE_MODEL_CACHE";

fn hf_hub_dir() -> Option<PathBuf> {
    if let Some(home) = std::env::var_os("HF_HOME") {
        return Some(PathBuf::from(home).join("hub"));
    }
    std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache/huggingface/hub"))
}

fn hub_snapshot(hub: &Path, id: &str) -> Option<PathBuf> {
    let repo = hub.join(format!("models--{}", id.replace('/', "--")));
    let snapshots = repo.join("snapshots");
    let pinned = std::fs::read_to_string(repo.join("refs/main"))
        .ok()
        .map(|rev| snapshots.join(rev.trim()));
    if let Some(p) = pinned.filter(|p| p.is_dir()) {
        return Some(p);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&snapshots)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    entries.pop()
}

/// Finds the directory holding `id`'s files. Tried in order: `id` as a
/// path, `$MAPLE_MODEL_CACHE/<id>`, `$MAPLE_MODEL_CACHE/<org>--<name>` and
/// the Hugging Face hub cache.
pub fn resolve_model_dir(id: &str) -> Result<PathBuf> {
    let mut searched = Vec::new();
    let direct = PathBuf::from(id);
    if direct.is_dir() {
        return Ok(direct);
    }
    searched.push(direct);
    if let Some(cache) = std::env::var_os(MODEL_CACHE_ENV) {
        let cache = PathBuf::from(cache);
        for candidate in [cache.join(id), cache.join(id.replace('/', "--"))] {
            if candidate.is_dir() {
                return Ok(candidate);
            }
            searched.push(candidate);
        }
    }
    if let Some(hub) = hf_hub_dir() {
        if let Some(p) = hub_snapshot(&hub, id) {
            return Ok(p);
        }
        searched.push(hub);
    }
    Err(Error::ModelUnavailable {
        id: id.to_string(),
        searched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn existing_directory_resolves_to_itself() {
        let dir = tempfile::tempdir().unwrap();
        let id = dir.path().to_str().unwrap();
        assert_eq!(resolve_model_dir(id).unwrap(), dir.path());
    }

    #[test]
    fn hub_layout_prefers_pinned_revision() {
        let hub = tempfile::tempdir().unwrap();
        let repo = hub.path().join("models--org--name");
        std::fs::create_dir_all(repo.join("snapshots/aaa")).unwrap();
        std::fs::create_dir_all(repo.join("snapshots/bbb")).unwrap();
        std::fs::create_dir_all(repo.join("refs")).unwrap();
        std::fs::write(repo.join("refs/main"), "aaa\n").unwrap();
        assert_eq!(hub_snapshot(hub.path(), "org/name").unwrap(), repo.join("snapshots/aaa"));
    }

    #[test]
    fn unknown_model_is_a_backend_error() {
        let err = resolve_model_dir("no-such-org/no-such-model-xyz").unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Backend);
    }
}
