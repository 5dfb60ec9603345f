//! Classification tasks over the four diagnostic labels.
//!
//! Class indices follow severity, so in every binary task the more severe
//! label is class 1 and is treated as positive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ClassLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Task {
    AdNc,
    AdEmci,
    LmciNc,
    EmciLmci,
    ThreeWay,
    FourWay,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::AdNc,
        Task::AdEmci,
        Task::LmciNc,
        Task::EmciLmci,
        Task::ThreeWay,
        Task::FourWay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::AdNc => "ad-nc",
            Task::AdEmci => "ad-emci",
            Task::LmciNc => "lmci-nc",
            Task::EmciLmci => "emci-lmci",
            Task::ThreeWay => "3way",
            Task::FourWay => "4way",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Task::ThreeWay => 3,
            Task::FourWay => 4,
            _ => 2,
        }
    }

    pub fn is_binary(self) -> bool {
        self.num_classes() == 2
    }

    /// Task class of `label`, or `None` when the task excludes it.
    pub fn class_of(self, label: ClassLabel) -> Option<usize> {
        use ClassLabel::*;
        match (self, label) {
            (Task::AdNc, NC) | (Task::AdEmci, EMCI) | (Task::LmciNc, NC) | (Task::EmciLmci, EMCI) => Some(0),
            (Task::AdNc, AD) | (Task::AdEmci, AD) | (Task::LmciNc, LMCI) | (Task::EmciLmci, LMCI) => Some(1),
            (Task::ThreeWay, NC) => Some(0),
            (Task::ThreeWay, EMCI | LMCI) => Some(1),
            (Task::ThreeWay, AD) => Some(2),
            (Task::FourWay, l) => Some(l.severity()),
            _ => None,
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            Task::AdNc => vec!["NC", "AD"],
            Task::AdEmci => vec!["EMCI", "AD"],
            Task::LmciNc => vec!["NC", "LMCI"],
            Task::EmciLmci => vec!["EMCI", "LMCI"],
            Task::ThreeWay => vec!["NC", "MCI", "AD"],
            Task::FourWay => vec!["NC", "EMCI", "LMCI", "AD"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|t| t.name()).collect();
            Error::Config(format!("unknown task {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

impl TryFrom<String> for Task {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Task> for String {
    fn from(t: Task) -> String {
        t.name().to_string()
    }
}
