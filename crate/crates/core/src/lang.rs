use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Supported languages, identified by their ISO-639-1 codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Fr,
    De,
    Ru,
    It,
}

impl Language {
    pub const ALL: [Language; 5] = [
        Language::En,
        Language::Fr,
        Language::De,
        Language::Ru,
        Language::It,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Fr => "fr",
            Language::De => "de",
            Language::Ru => "ru",
            Language::It => "it",
        }
    }

    /// Reserved vocabulary token selecting this language, e.g. `<fr>`.
    pub fn tag(self) -> String {
        format!("<{}>", self.code())
    }

    /// Tesseract language-pack code.
    pub fn tesseract_pack(self) -> &'static str {
        match self {
            Language::En => "eng",
            Language::Fr => "fra",
            Language::De => "deu",
            Language::Ru => "rus",
            Language::It => "ita",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "fr" => Ok(Language::Fr),
            "de" => Ok(Language::De),
            "ru" => Ok(Language::Ru),
            "it" => Ok(Language::It),
            other => Err(Error::Validation(format!("unsupported language tag {other:?}"))),
        }
    }
}
