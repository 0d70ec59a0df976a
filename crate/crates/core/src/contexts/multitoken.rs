use crate::error::{Error, Result};

/// Exclusive upper bound of values that can be chunked (six chunks).
pub const MAX_MULTITOKEN: u64 = 1_000_000_000_000_000_000;

/// Split `value` into base-1000 chunks, most significant first.
///
/// `1234567` becomes `[1, 234, 567]`; values below 1000 are a single chunk.
pub fn encode_multitoken(value: u64) -> Result<Vec<u16>> {
    if value >= MAX_MULTITOKEN {
        return Err(Error::Range(format!("{value} needs more than six chunks")));
    }
    let mut chunks = Vec::with_capacity(6);
    let mut v = value;
    loop {
        chunks.push((v % 1000) as u16);
        v /= 1000;
        if v == 0 {
            break;
        }
    }
    chunks.reverse();
    Ok(chunks)
}

pub fn decode_multitoken(chunks: &[u16]) -> Result<u64> {
    if chunks.is_empty() || chunks.len() > 6 {
        return Err(Error::Range(format!("{} chunks", chunks.len())));
    }
    if chunks.len() > 1 && chunks[0] == 0 {
        return Err(Error::Range("leading chunk is zero".into()));
    }
    chunks.iter().try_fold(0u64, |acc, &c| {
        if c >= 1000 {
            Err(Error::Range(format!("chunk {c} exceeds 999")))
        } else {
            Ok(acc * 1000 + u64::from(c))
        }
    })
}

/// Surface form of each chunk: the leading chunk plain, the rest padded to
/// three digits, so the pieces concatenate to the decimal string.
pub fn chunk_strings(chunks: &[u16]) -> Vec<String> {
    chunks
        .iter()
        .enumerate()
        .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{c:03}") })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Groups the decimal string in threes from the right.
    fn grouping_oracle(value: u64) -> Vec<u16> {
        let s = value.to_string();
        let head = s.len() % 3;
        let mut out = Vec::new();
        if head > 0 {
            out.push(s[..head].parse().unwrap());
        }
        let mut i = head;
        while i < s.len() {
            out.push(s[i..i + 3].parse().unwrap());
            i += 3;
        }
        out
    }

    #[test]
    fn examples() {
        assert_eq!(encode_multitoken(999).unwrap(), vec![999]);
        assert_eq!(encode_multitoken(0).unwrap(), vec![0]);
        assert_eq!(encode_multitoken(1_234_567).unwrap(), grouping_oracle(1_234_567));
        assert_eq!(encode_multitoken(1_234_567).unwrap(), vec![1, 234, 567]);
        assert_eq!(encode_multitoken(MAX_MULTITOKEN - 1).unwrap(), vec![999; 6]);
        assert!(matches!(encode_multitoken(MAX_MULTITOKEN), Err(Error::Range(_))));
        assert_eq!(chunk_strings(&[1, 34, 5]).concat(), "1034005");
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(v in 0u64..MAX_MULTITOKEN) {
            let chunks = encode_multitoken(v).unwrap();
            prop_assert_eq!(&chunks, &grouping_oracle(v));
            prop_assert_eq!(decode_multitoken(&chunks).unwrap(), v);
            prop_assert_eq!(chunk_strings(&chunks).concat(), v.to_string());
        }
    }
}
