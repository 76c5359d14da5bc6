//! Per-token attribute parsing, template captions and the trait index.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::record::TokenRecord;
use crate::registry::{Registry, UnknownStrategy};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetadataError {
    #[error("malformed metadata: {0}")]
    MalformedMetadata(String),
    #[error("metadata has no usable attributes")]
    NoSemanticContent,
    #[error("a caption needs at least one attribute")]
    EmptyAttributes,
    #[error("trait `{0}` is not part of the caption")]
    TraitNotPresent(TraitKey),
    #[error(transparent)]
    UnknownTemplate(#[from] UnknownStrategy),
}

impl MetadataError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MalformedMetadata(_) => "metadata.malformed",
            Self::NoSemanticContent => "metadata.no_semantic_content",
            Self::EmptyAttributes => "metadata.empty_attributes",
            Self::TraitNotPresent(_) => "metadata.trait_not_present",
            Self::UnknownTemplate(_) => "metadata.unknown_template",
        }
    }
}

/// One `(trait_type, value)` pair. Also serves as the trait key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub trait_type: String,
    pub value: String,
}

pub type TraitKey = Attribute;

impl Attribute {
    pub fn new(trait_type: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            trait_type: trait_type.into(),
            value: value.into(),
        }
    }

    /// Short stable hash used for on-disk directory names.
    pub fn key_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.trait_type.as_bytes());
        h.update([0x1f]);
        h.update(self.value.as_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.trait_type, self.value)
    }
}

/// Attributes in file order with duplicate pairs removed (first wins).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct AttributeList {
    attrs: Vec<Attribute>,
}

impl<'de> Deserialize<'de> for AttributeList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Self::new(Vec::<Attribute>::deserialize(d)?))
    }
}

impl AttributeList {
    pub fn new(attrs: impl IntoIterator<Item = Attribute>) -> Self {
        let mut seen = BTreeSet::new();
        let attrs = attrs.into_iter().filter(|a| seen.insert(a.clone())).collect();
        Self { attrs }
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Attribute> {
        self.attrs.iter()
    }

    pub fn contains(&self, key: &TraitKey) -> bool {
        self.attrs.contains(key)
    }

    pub fn as_slice(&self) -> &[Attribute] {
        &self.attrs
    }

    /// Copy of the list without `key`; order of the rest is kept.
    pub fn without(&self, key: &TraitKey) -> Self {
        Self {
            attrs: self.attrs.iter().filter(|a| *a != key).cloned().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a AttributeList {
    type Item = &'a Attribute;
    type IntoIter = std::slice::Iter<'a, Attribute>;
    fn into_iter(self) -> Self::IntoIter {
        self.attrs.iter()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Keep attributes whose value normalizes to the empty string.
    pub keep_empty: bool,
}

/// Trim and collapse internal whitespace runs to one space. No case folding.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn stringify_value(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(if let Some(i) = n.as_i64() {
            i.to_string()
        } else if let Some(u) = n.as_u64() {
            u.to_string()
        } else {
            // f64 Display never switches to exponent notation.
            format!("{}", n.as_f64()?)
        }),
        Value::Null | Value::Array(_) | Value::Object(_) => None,
    }
}

pub fn parse_metadata(raw: &[u8]) -> Result<AttributeList, MetadataError> {
    parse_metadata_with(raw, ParseOptions::default())
}

/// Reads the conventional top-level `attributes` array of
/// `{trait_type, value}` objects. Other fields are ignored; other layouts
/// are rejected.
pub fn parse_metadata_with(raw: &[u8], opts: ParseOptions) -> Result<AttributeList, MetadataError> {
    let text = std::str::from_utf8(raw).map_err(|e| MetadataError::MalformedMetadata(format!("not UTF-8: {e}")))?;
    let doc: Value = serde_json::from_str(text).map_err(|e| MetadataError::MalformedMetadata(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| MetadataError::MalformedMetadata("top level is not an object".into()))?;
    let entries = match obj.get("attributes") {
        None | Some(Value::Null) => return Err(MetadataError::NoSemanticContent),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(MetadataError::MalformedMetadata("`attributes` is not an array".into())),
    };

    let mut attrs = Vec::with_capacity(entries.len());
    for entry in entries {
        let Some(entry) = entry.as_object() else { continue };
        let Some(Value::String(trait_type)) = entry.get("trait_type") else {
            continue;
        };
        let trait_type = normalize_text(trait_type);
        if trait_type.is_empty() {
            continue;
        }
        let Some(value) = entry.get("value").and_then(stringify_value) else {
            continue;
        };
        let value = normalize_text(&value);
        if value.is_empty() && !opts.keep_empty {
            continue;
        }
        attrs.push(Attribute { trait_type, value });
    }
    let list = AttributeList::new(attrs);
    if list.is_empty() {
        return Err(MetadataError::NoSemanticContent);
    }
    Ok(list)
}

/// A sentence template turning attributes into caption text.
///
/// Templates must keep one phrase per attribute so a single trait can be
/// removed and the caption re-rendered.
pub trait CaptionTemplate: Send + Sync {
    fn id(&self) -> &'static str;
    fn phrase(&self, attr: &Attribute) -> String;
    fn join(&self, collection: &str, phrases: &[&str]) -> String;
}

/// `a <collection> NFT with <value> <trait type>, <value> <trait type>`.
#[derive(Debug, Default)]
pub struct TraitSpliceV1;

impl CaptionTemplate for TraitSpliceV1 {
    fn id(&self) -> &'static str {
        "trait-splice-v1"
    }

    fn phrase(&self, attr: &Attribute) -> String {
        format!("{} {}", attr.value, attr.trait_type.to_lowercase())
    }

    fn join(&self, collection: &str, phrases: &[&str]) -> String {
        if phrases.is_empty() {
            format!("a {collection} NFT")
        } else {
            format!("a {collection} NFT with {}", phrases.join(", "))
        }
    }
}

pub const DEFAULT_TEMPLATE: &str = "trait-splice-v1";

static TEMPLATES: LazyLock<Registry<dyn CaptionTemplate>> = LazyLock::new(|| {
    Registry::<dyn CaptionTemplate>::new("caption template").with("trait-splice-v1", || Box::new(TraitSpliceV1))
});

pub fn templates() -> &'static Registry<dyn CaptionTemplate> {
    &TEMPLATES
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub key: TraitKey,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    collection_name: String,
    template_id: String,
    segments: Vec<Segment>,
    rendered: String,
}

impl Caption {
    pub fn collection_name(&self) -> &str {
        &self.collection_name
    }

    pub fn template_id(&self) -> &str {
        &self.template_id
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    pub fn has_trait(&self, key: &TraitKey) -> bool {
        self.segments.iter().any(|s| &s.key == key)
    }

    /// Remaining attributes in caption order.
    pub fn attributes(&self) -> AttributeList {
        AttributeList::new(self.segments.iter().map(|s| s.key.clone()))
    }
}

impl fmt::Display for Caption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rendered)
    }
}

fn assemble(template: &dyn CaptionTemplate, collection: &str, segments: Vec<Segment>) -> Caption {
    let phrases: Vec<&str> = segments.iter().map(|s| s.phrase.as_str()).collect();
    let rendered = template.join(collection, &phrases);
    Caption {
        collection_name: collection.to_string(),
        template_id: template.id().to_string(),
        segments,
        rendered,
    }
}

pub fn render_caption(collection: &str, attrs: &AttributeList) -> Result<Caption, MetadataError> {
    render_caption_with(&TraitSpliceV1, collection, attrs)
}

pub fn render_caption_with(
    template: &dyn CaptionTemplate,
    collection: &str,
    attrs: &AttributeList,
) -> Result<Caption, MetadataError> {
    if attrs.is_empty() {
        return Err(MetadataError::EmptyAttributes);
    }
    let segments = attrs
        .iter()
        .map(|a| Segment {
            key: a.clone(),
            phrase: template.phrase(a),
        })
        .collect();
    Ok(assemble(template, collection, segments))
}

/// Renders with the template registered under `template_id`.
pub fn render_caption_by_id(
    template_id: &str,
    collection: &str,
    attrs: &AttributeList,
) -> Result<Caption, MetadataError> {
    let template = templates().create(template_id)?;
    render_caption_with(template.as_ref(), collection, attrs)
}

/// Like [`render_caption_by_id`] but an empty list yields the bare
/// collection prefix, the form left after every segment is removed.
pub fn render_partial_caption(
    template_id: &str,
    collection: &str,
    attrs: &AttributeList,
) -> Result<Caption, MetadataError> {
    let template = templates().create(template_id)?;
    let segments = attrs
        .iter()
        .map(|a| Segment {
            key: a.clone(),
            phrase: template.phrase(a),
        })
        .collect();
    Ok(assemble(template.as_ref(), collection, segments))
}

/// Drops one trait's segment and re-renders. Removing the last segment
/// leaves the bare collection prefix.
pub fn remove_trait(caption: &Caption, key: &TraitKey) -> Result<Caption, MetadataError> {
    if !caption.has_trait(key) {
        return Err(MetadataError::TraitNotPresent(key.clone()));
    }
    let template = templates().create(&caption.template_id)?;
    let segments = caption.segments.iter().filter(|s| &s.key != key).cloned().collect();
    Ok(assemble(template.as_ref(), &caption.collection_name, segments))
}

/// Inverted index from trait key to the ids of tokens carrying it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraitIndex {
    map: BTreeMap<TraitKey, BTreeSet<u64>>,
}

impl TraitIndex {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (u64, &'a AttributeList)>) -> Self {
        let mut map: BTreeMap<TraitKey, BTreeSet<u64>> = BTreeMap::new();
        for (token_id, attrs) in pairs {
            for attr in attrs {
                map.entry(attr.clone()).or_default().insert(token_id);
            }
        }
        Self { map }
    }

    pub fn carriers(&self, key: &TraitKey) -> Option<&BTreeSet<u64>> {
        self.map.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TraitKey, &BTreeSet<u64>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn build_trait_index<'a>(records: impl IntoIterator<Item = &'a TokenRecord>) -> TraitIndex {
    TraitIndex::from_pairs(records.into_iter().map(|r| (r.token_id, &r.attributes)))
}
