//! The 21 age bands used for group-level fit, per sex.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::claims::Sex;

/// Upper bounds (inclusive) of the closed-right bands; the last band is open.
const UPPER: [i32; 20] = [
    1, 2, 4, 9, 14, 18, 20, 24, 29, 34, 39, 44, 49, 54, 59, 64, 69, 74, 79, 84,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeBand(u8);

impl AgeBand {
    pub const COUNT: usize = 21;

    pub fn all() -> impl Iterator<Item = AgeBand> {
        (0..Self::COUNT as u8).map(AgeBand)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(i: usize) -> Option<AgeBand> {
        (i < Self::COUNT).then_some(AgeBand(i as u8))
    }

    /// Age 0 (and any negative age from bad data) falls into the first band.
    pub fn from_age(age: i32) -> AgeBand {
        let i = UPPER
            .iter()
            .position(|&hi| age <= hi)
            .unwrap_or(UPPER.len());
        AgeBand(i as u8)
    }

    /// Integer ages generated for this band: `(lo, hi]`, with the first band
    /// also admitting 0 and the open band capped at 94.
    pub fn age_range(self) -> (i32, i32) {
        let i = self.index();
        if i == 0 {
            (0, 1)
        } else if i == UPPER.len() {
            (85, 94)
        } else {
            (UPPER[i - 1] + 1, UPPER[i])
        }
    }

    pub fn label(self) -> String {
        let i = self.index();
        if i == UPPER.len() {
            "84+".to_string()
        } else {
            let lo = if i == 0 { 0 } else { UPPER[i - 1] };
            format!("({lo}, {}]", UPPER[i])
        }
    }

    pub fn from_label(label: &str) -> Option<AgeBand> {
        AgeBand::all().find(|b| b.label() == label)
    }
}

impl fmt::Display for AgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for AgeBand {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for AgeBand {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AgeBand::from_label(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown age band `{s}`")))
    }
}

/// A (sex, age band) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Group {
    pub sex: Sex,
    pub band: AgeBand,
}

impl Group {
    pub fn new(sex: Sex, age: i32) -> Self {
        Group {
            sex,
            band: AgeBand::from_age(age),
        }
    }

    /// All 42 cells, males first, bands ascending.
    pub fn all() -> impl Iterator<Item = Group> {
        [Sex::Male, Sex::Female]
            .into_iter()
            .flat_map(|sex| AgeBand::all().map(move |band| Group { sex, band }))
    }
}
