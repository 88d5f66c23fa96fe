//! The 18 creature types and their vector encoding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of distinct creature types.
pub const NUM_TYPES: usize = 18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("unknown type {0:?}")]
    Unknown(String),
    #[error("a type list needs one or two entries, got {0}")]
    Arity(usize),
    #[error("duplicate type {0}")]
    Duplicate(CreatureType),
    #[error("type vector magnitude must be positive and finite, got {0}")]
    Magnitude(f64),
}

/// A gameplay type. Discriminants follow the canonical alphabetical order,
/// which is also the index order inside a [`TypeVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CreatureType {
    Bug,
    Dark,
    Dragon,
    Electric,
    Fairy,
    Fighting,
    Fire,
    Flying,
    Ghost,
    Grass,
    Ground,
    Ice,
    Normal,
    Poison,
    Psychic,
    Rock,
    Steel,
    Water,
}

impl CreatureType {
    pub const ALL: [CreatureType; NUM_TYPES] = [
        CreatureType::Bug,
        CreatureType::Dark,
        CreatureType::Dragon,
        CreatureType::Electric,
        CreatureType::Fairy,
        CreatureType::Fighting,
        CreatureType::Fire,
        CreatureType::Flying,
        CreatureType::Ghost,
        CreatureType::Grass,
        CreatureType::Ground,
        CreatureType::Ice,
        CreatureType::Normal,
        CreatureType::Poison,
        CreatureType::Psychic,
        CreatureType::Rock,
        CreatureType::Steel,
        CreatureType::Water,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CreatureType::Bug => "Bug",
            CreatureType::Dark => "Dark",
            CreatureType::Dragon => "Dragon",
            CreatureType::Electric => "Electric",
            CreatureType::Fairy => "Fairy",
            CreatureType::Fighting => "Fighting",
            CreatureType::Fire => "Fire",
            CreatureType::Flying => "Flying",
            CreatureType::Ghost => "Ghost",
            CreatureType::Grass => "Grass",
            CreatureType::Ground => "Ground",
            CreatureType::Ice => "Ice",
            CreatureType::Normal => "Normal",
            CreatureType::Poison => "Poison",
            CreatureType::Psychic => "Psychic",
            CreatureType::Rock => "Rock",
            CreatureType::Steel => "Steel",
            CreatureType::Water => "Water",
        }
    }
}

impl fmt::Display for CreatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CreatureType {
    type Err = TypeError;

    /// Case-insensitive; surrounding whitespace is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| TypeError::Unknown(trimmed.to_string()))
    }
}

impl TryFrom<String> for CreatureType {
    type Error = TypeError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<CreatureType> for String {
    fn from(value: CreatureType) -> Self {
        value.name().to_string()
    }
}

/// Checks the 1..=2 arity and uniqueness rules shared by records and requests.
pub fn validate_type_list(types: &[CreatureType]) -> Result<(), TypeError> {
    if types.is_empty() || types.len() > 2 {
        return Err(TypeError::Arity(types.len()));
    }
    if types.len() == 2 && types[0] == types[1] {
        return Err(TypeError::Duplicate(types[0]));
    }
    Ok(())
}

/// Parses a list of names and validates it with [`validate_type_list`].
pub fn parse_type_list<S: AsRef<str>>(names: &[S]) -> Result<Vec<CreatureType>, TypeError> {
    let types = names
        .iter()
        .map(|n| n.as_ref().parse())
        .collect::<Result<Vec<CreatureType>, _>>()?;
    validate_type_list(&types)?;
    Ok(types)
}

/// Length-18 conditioning vector. A single type at magnitude `m` puts `m` in
/// its slot; a dual type puts `m / 2` in each of its two slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeVector(pub [f32; NUM_TYPES]);

impl TypeVector {
    pub fn encode(types: &[CreatureType], magnitude: f64) -> Result<Self, TypeError> {
        validate_type_list(types)?;
        if !(magnitude.is_finite() && magnitude > 0.0) {
            return Err(TypeError::Magnitude(magnitude));
        }
        let share = (magnitude / types.len() as f64) as f32;
        let mut values = [0.0f32; NUM_TYPES];
        for t in types {
            values[t.index()] = share;
        }
        Ok(TypeVector(values))
    }

    /// Unit-magnitude encoding used for training.
    pub fn unit(types: &[CreatureType]) -> Result<Self, TypeError> {
        Self::encode(types, 1.0)
    }

    pub fn values(&self) -> &[f32; NUM_TYPES] {
        &self.0
    }

    pub fn magnitude(&self) -> f32 {
        self.0.iter().sum()
    }

    /// Entries clamped into [0, 1] so the vector can serve as a
    /// cross-entropy target.
    pub fn clamped(&self) -> [f32; NUM_TYPES] {
        self.0.map(|v| v.clamp(0.0, 1.0))
    }

    /// Non-zero slots, in index order.
    pub fn active_types(&self) -> Vec<CreatureType> {
        CreatureType::ALL
            .iter()
            .copied()
            .filter(|t| self.0[t.index()] != 0.0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_alphabetical() {
        let names: Vec<&str> = CreatureType::ALL.iter().map(|t| t.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(names.first(), Some(&"Bug"));
        assert_eq!(names.last(), Some(&"Water"));
        for (i, t) in CreatureType::ALL.iter().enumerate() {
            assert_eq!(t.index(), i);
        }
    }

    #[test]
    fn parse_is_case_insensitive_and_rejects_unknown() {
        assert_eq!("fire".parse::<CreatureType>(), Ok(CreatureType::Fire));
        assert_eq!(" Water ".parse::<CreatureType>(), Ok(CreatureType::Water));
        assert!(matches!(
            "Shadow".parse::<CreatureType>(),
            Err(TypeError::Unknown(_))
        ));
    }

    #[test]
    fn single_type_is_one_hot() {
        let v = TypeVector::unit(&[CreatureType::Fire]).unwrap();
        for (i, x) in v.values().iter().enumerate() {
            let expected = if i == CreatureType::Fire.index() { 1.0 } else { 0.0 };
            assert_eq!(*x, expected);
        }
    }

    #[test]
    fn dual_type_splits_mass() {
        let v = TypeVector::unit(&[CreatureType::Grass, CreatureType::Fairy]).unwrap();
        assert_eq!(v.values()[CreatureType::Grass.index()], 0.5);
        assert_eq!(v.values()[CreatureType::Fairy.index()], 0.5);
        assert_eq!(v.values().iter().filter(|x| **x != 0.0).count(), 2);
        assert_eq!(v.magnitude(), 1.0);
    }

    #[test]
    fn magnitude_scales_entries() {
        let v = TypeVector::encode(&[CreatureType::Water], 20.0).unwrap();
        assert_eq!(v.values()[CreatureType::Water.index()], 20.0);
        assert_eq!(v.clamped()[CreatureType::Water.index()], 1.0);
    }

    #[test]
    fn invalid_lists_rejected() {
        assert_eq!(TypeVector::unit(&[]), Err(TypeError::Arity(0)));
        let three = [CreatureType::Fire, CreatureType::Water, CreatureType::Ice];
        assert_eq!(TypeVector::unit(&three), Err(TypeError::Arity(3)));
        let dup = [CreatureType::Ice, CreatureType::Ice];
        assert_eq!(
            TypeVector::unit(&dup),
            Err(TypeError::Duplicate(CreatureType::Ice))
        );
        assert!(TypeVector::encode(&[CreatureType::Ice], 0.0).is_err());
        assert!(parse_type_list(&["Fire", "Shadow"]).is_err());
    }

    #[test]
    fn serde_uses_names() {
        let json = serde_json::to_string(&CreatureType::Psychic).unwrap();
        assert_eq!(json, "\"Psychic\"");
        let back: CreatureType = serde_json::from_str("\"psychic\"").unwrap();
        assert_eq!(back, CreatureType::Psychic);
    }
}
