use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metadata::{render_caption_by_id, AttributeList, Caption, MetadataError, TraitKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One manifest line. Field order is the on-disk JSON order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub collection: String,
    pub token_id: u64,
    /// Standardized PNG, relative to the manifest directory.
    pub image: PathBuf,
    pub caption: String,
    pub template_id: String,
    pub attributes: AttributeList,
    pub split: Split,
    pub frame_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_traits: Option<Vec<TraitKey>>,
}

impl TokenRecord {
    /// Row identifier used in embedding matrices: `<collection>/<token_id>`.
    pub fn key(&self) -> String {
        record_key(&self.collection, self.token_id)
    }

    /// Rebuilds the structured caption from the stored attributes.
    pub fn render(&self) -> Result<Caption, MetadataError> {
        render_caption_by_id(&self.template_id, &self.collection, &self.attributes)
    }
}

pub fn record_key(collection: &str, token_id: u64) -> String {
    format!("{collection}/{token_id}")
}

/// Splits `<collection>/<token_id>` back into its parts.
pub fn split_key(key: &str) -> Option<(&str, u64)> {
    let (c, t) = key.rsplit_once('/')?;
    Some((c, t.parse().ok()?))
}
