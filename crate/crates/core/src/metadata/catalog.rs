use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Whether a component collects data from the consumer or only displays it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
}

/// The closed component catalog. Anything not listed here is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentKind {
    FileUpload,
    FileDownload,
    TextIn,
    TextView,
    ListSelectOne,
    ListSelectMulti,
    ImageWithSelectOne,
    ImageWithSelectMulti,
    ImageWithTextIn,
    ImageView,
    DocumentWithTextIn,
    DocumentView,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 12] = [
        ComponentKind::FileUpload,
        ComponentKind::FileDownload,
        ComponentKind::TextIn,
        ComponentKind::TextView,
        ComponentKind::ListSelectOne,
        ComponentKind::ListSelectMulti,
        ComponentKind::ImageWithSelectOne,
        ComponentKind::ImageWithSelectMulti,
        ComponentKind::ImageWithTextIn,
        ComponentKind::ImageView,
        ComponentKind::DocumentWithTextIn,
        ComponentKind::DocumentView,
    ];

    /// Wire name, e.g. `Image.WithSelectMulti`.
    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::FileUpload => "File.Upload",
            ComponentKind::FileDownload => "File.Download",
            ComponentKind::TextIn => "Text.In",
            ComponentKind::TextView => "Text.View",
            ComponentKind::ListSelectOne => "List.SelectOne",
            ComponentKind::ListSelectMulti => "List.SelectMulti",
            ComponentKind::ImageWithSelectOne => "Image.WithSelectOne",
            ComponentKind::ImageWithSelectMulti => "Image.WithSelectMulti",
            ComponentKind::ImageWithTextIn => "Image.WithTextIn",
            ComponentKind::ImageView => "Image.View",
            ComponentKind::DocumentWithTextIn => "Document.WithTextIn",
            ComponentKind::DocumentView => "Document.View",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            ComponentKind::FileDownload
            | ComponentKind::TextView
            | ComponentKind::ImageView
            | ComponentKind::DocumentView => Direction::Output,
            _ => Direction::Input,
        }
    }

    pub fn is_input(self) -> bool {
        self.direction() == Direction::Input
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownComponent(pub String);

impl fmt::Display for UnknownComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown component `{}`", self.0)
    }
}

impl std::error::Error for UnknownComponent {}

impl FromStr for ComponentKind {
    type Err = UnknownComponent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComponentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownComponent(s.to_string()))
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ComponentKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ComponentKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
