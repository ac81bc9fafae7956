//! Closed vocabularies for the three disease relations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One of the three ontology-derived relations attached to a disease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Type,
    Severity,
    Site,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Type, Relation::Severity, Relation::Site];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Type => "type",
            Relation::Severity => "severity",
            Relation::Site => "site",
        }
    }

    /// Short tag used in order strings such as `t>sit>gr`.
    pub fn short(self) -> &'static str {
        match self {
            Relation::Type => "t",
            Relation::Severity => "gr",
            Relation::Site => "sit",
        }
    }

    /// Closed label vocabulary a stage model for this relation predicts over.
    pub fn vocabulary(self) -> Vec<&'static str> {
        match self {
            Relation::Type => TypeLabel::ALL.iter().map(|v| v.as_str()).collect(),
            Relation::Severity => SeverityLabel::ALL.iter().map(|v| v.as_str()).collect(),
            Relation::Site => SiteLabel::ALL.iter().map(|v| v.as_str()).collect(),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "type" | "t" => Ok(Relation::Type),
            "severity" | "gr" | "sev" => Ok(Relation::Severity),
            "site" | "sit" | "location" => Ok(Relation::Site),
            other => Err(format!(
                "unknown relation {other:?} (expected type|severity|site)"
            )),
        }
    }
}

impl Serialize for Relation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! closed_vocab {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Exact match against the canonical spelling (case and
            /// whitespace insensitive).
            pub fn parse_exact(raw: &str) -> Option<Self> {
                let key = crate::text::normalize_label(raw);
                Self::ALL.iter().copied().find(|v| v.as_str() == key)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                Self::parse_exact(&s).ok_or_else(|| {
                    serde::de::Error::custom(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        s
                    ))
                })
            }
        }
    };
}

closed_vocab! {
    /// Semantic type of a disease.
    TypeLabel {
        NeoplasticProcess => "neoplastic process",
        AutoimmuneProcess => "autoimmune process",
        Precancer => "precancer",
        Disease => "disease",
        Infection => "infection",
        BenignTumor => "benign tumor",
        Symptom => "symptom",
        Abnormality => "abnormality",
        Syndrome => "syndrome",
        PathologicalFunction => "pathological function",
        Poisoning => "poisoning",
        NoDisease => "no disease",
    }
}

closed_vocab! {
    /// Severity grade, ordered from least to most severe.
    SeverityLabel {
        Harmless => "harmless",
        Mild => "mild",
        Important => "important",
        Extreme => "extreme",
    }
}

closed_vocab! {
    /// Anatomical finding site.
    SiteLabel {
        Skin => "skin",
        Extremities => "extremities",
        All => "all",
        Hand => "hand",
        Joints => "joints",
        Head => "head",
        Face => "face",
        Leg => "leg",
        Mouth => "mouth",
        Torso => "torso",
        Genitals => "genitals",
        ConnectiveTissue => "connective tissue",
    }
}

impl SeverityLabel {
    /// Map any severity spelling found in the source material onto the
    /// canonical four-value scale. Canonical spellings map to themselves.
    pub fn canonicalize(raw: &str) -> Option<Self> {
        if let Some(exact) = Self::parse_exact(raw) {
            return Some(exact);
        }
        match crate::text::normalize_label(raw).as_str() {
            "inoffensive" => Some(SeverityLabel::Harmless),
            "light" | "minor" | "moderate" => Some(SeverityLabel::Mild),
            "significant" | "major" => Some(SeverityLabel::Important),
            "deadly" => Some(SeverityLabel::Extreme),
            _ => None,
        }
    }
}
