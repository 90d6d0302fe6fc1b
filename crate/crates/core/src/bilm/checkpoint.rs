use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::BiLm;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "xling-bilm";

#[derive(Serialize)]
struct Envelope<'a> {
    format: &'a str,
    version: u32,
    model: &'a BiLm,
}

#[derive(Deserialize)]
struct OwnedEnvelope {
    format: String,
    version: u32,
    model: BiLm,
}

impl BiLm {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Envelope {
            format: FORMAT,
            version: CHECKPOINT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: OwnedEnvelope = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable language model: {e}")))?;
        if env.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "expected a `{FORMAT}` checkpoint, found `{}`",
                env.format
            )));
        }
        if env.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                env.version
            )));
        }
        let mut model = env.model;
        model.vocab.rebuild_index();
        model.config.validate()?;
        if !model.params.all_finite() {
            return Err(Error::NonFinite("language-model checkpoint"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    #[test]
    fn json_round_trip_preserves_outputs() {
        let vocab = build_vocab(["a", "bb", "a"], 1);
        let lm = BiLm::new(super::super::tests::tiny_config(), vocab, vec!["x".into()]).unwrap();
        let back = BiLm::from_json(&lm.to_json().unwrap()).unwrap();
        assert_eq!(back.vocab().word_id("bb"), lm.vocab().word_id("bb"));
        assert_eq!(
            back.forward(&["a", "bb"]).unwrap(),
            lm.forward(&["a", "bb"]).unwrap()
        );
        assert_eq!(back.fingerprint(), lm.fingerprint());
    }

    #[test]
    fn wrong_version_rejected() {
        let vocab = build_vocab(["a"], 1);
        let lm = BiLm::new(super::super::tests::tiny_config(), vocab, vec![]).unwrap();
        let text = lm
            .to_json()
            .unwrap()
            .replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(BiLm::from_json(&text), Err(Error::Checkpoint(_))));
        assert!(BiLm::from_json("{").is_err());
    }
}
