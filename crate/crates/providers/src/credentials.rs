//! API keys come from the environment only.

use crate::error::ProviderError;

pub const GENERATION_KEY_VAR: &str = "LREXPLAIN_API_KEY";
pub const EMBEDDING_KEY_VAR: &str = "LREXPLAIN_EMBED_API_KEY";

/// Looks up `primary`, then each fallback, through `lookup`. Empty values
/// count as unset.
pub fn resolve_key<F>(lookup: F, primary: &str, fallbacks: &[&str]) -> Result<String, ProviderError>
where
    F: Fn(&str) -> Option<String>,
{
    std::iter::once(primary)
        .chain(fallbacks.iter().copied())
        .filter_map(|var| lookup(var).filter(|v| !v.trim().is_empty()))
        .next()
        .ok_or_else(|| ProviderError::MissingCredential(primary.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn table(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn fallback_order() {
        let t = table(&[(GENERATION_KEY_VAR, "gen")]);
        let lookup = |k: &str| t.get(k).cloned();
        assert_eq!(resolve_key(lookup, EMBEDDING_KEY_VAR, &[GENERATION_KEY_VAR]).unwrap(), "gen");
        let t = table(&[(GENERATION_KEY_VAR, "gen"), (EMBEDDING_KEY_VAR, "emb")]);
        let lookup = |k: &str| t.get(k).cloned();
        assert_eq!(resolve_key(lookup, EMBEDDING_KEY_VAR, &[GENERATION_KEY_VAR]).unwrap(), "emb");
    }

    #[test]
    fn blank_is_missing() {
        let t = table(&[(GENERATION_KEY_VAR, "  ")]);
        let err = resolve_key(|k: &str| t.get(k).cloned(), GENERATION_KEY_VAR, &[]).unwrap_err();
        assert!(matches!(err, ProviderError::MissingCredential(v) if v == GENERATION_KEY_VAR));
    }
}
