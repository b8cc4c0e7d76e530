use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checksum {
    #[default]
    None,
    Luhn,
    /// ABA routing check digit, weights 3-7-1.
    Aba,
}

fn digits(s: &str) -> Vec<u32> {
    s.chars().filter_map(|c| c.to_digit(10)).collect()
}

/// Luhn mod-10 over the digits of `s`, 13 to 19 digits long.
pub fn luhn_valid(s: &str) -> bool {
    let d = digits(s);
    if !(13..=19).contains(&d.len()) {
        return false;
    }
    let sum: u32 = d
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &x)| {
            if i % 2 == 1 {
                let y = 2 * x;
                if y > 9 {
                    y - 9
                } else {
                    y
                }
            } else {
                x
            }
        })
        .sum();
    sum % 10 == 0
}

pub fn aba_valid(s: &str) -> bool {
    let d = digits(s);
    if d.len() != 9 {
        return false;
    }
    let sum: u32 = d.iter().zip([3, 7, 1].iter().cycle()).map(|(x, w)| x * w).sum();
    sum % 10 == 0
}

impl Checksum {
    pub fn accepts(self, s: &str) -> bool {
        match self {
            Checksum::None => true,
            Checksum::Luhn => luhn_valid(s),
            Checksum::Aba => aba_valid(s),
        }
    }
}
