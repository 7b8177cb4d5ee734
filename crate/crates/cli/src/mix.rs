use std::path::Path;

use anyhow::Context;

use crate::config::RunConfig;
use crate::usage;
use sepdiff_core::signal::mixture::make_mixture_in;
use sepdiff_core::signal::MixtureSpec;

/// A manifest holds one mixture spec or a list of them.
fn parse_manifest(text: &str) -> anyhow::Result<Vec<MixtureSpec>> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Manifest {
        One(MixtureSpec),
        Many(Vec<MixtureSpec>),
    }
    Ok(match serde_json::from_str(text)? {
        Manifest::One(s) => vec![s],
        Manifest::Many(v) => v,
    })
}

pub fn run(mut cfg: RunConfig) -> anyhow::Result<()> {
    let root = cfg.resolve_output();
    let manifest = cfg.manifest.clone().ok_or_else(|| usage("synth-mix needs --manifest"))?;
    let text = std::fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let specs = parse_manifest(&text).map_err(|e| usage(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut ids = std::collections::BTreeSet::new();
    for spec in &specs {
        if !ids.insert(spec.id.clone()) {
            return Err(usage(format!("duplicate mixture id {:?}", spec.id)));
        }
    }
    for spec in &specs {
        let mix = make_mixture_in(spec, base).with_context(|| format!("mixture {}", spec.id))?;
        let dir = mix.write(&root)?;
        println!("{}: {} sources -> {}", spec.id, mix.refs.len(), dir.display());
    }
    cfg.write_resolved(&root.join("mixtures"), "synth-mix")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_accepts_one_or_many() {
        let one = r#"{"id":"a","seed":1,"sources":[{"source":{"synth":{"kind":"harmonic","f0_min":110.0,"f0_max":220.0,"partials":3,"rolloff":0.5}}}]}"#;
        assert_eq!(parse_manifest(one).unwrap().len(), 1);
        assert_eq!(parse_manifest(&format!("[{one},{}]", one.replace("\"a\"", "\"b\""))).unwrap().len(), 2);
        assert!(parse_manifest("[]").unwrap().is_empty());
        assert!(parse_manifest("{\"nope\": 1}").is_err());
    }
}
