//! Fixed, platform-independent hashes. Bucket ids and record ids depend on
//! these staying bit-identical forever.

const FNV32_OFFSET: u32 = 0x811c_9dc5;
const FNV32_PRIME: u32 = 0x0100_0193;
const FNV64_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV64_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h = FNV32_OFFSET;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(FNV32_PRIME);
    }
    h
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV64_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV64_PRIME);
    }
    h
}

/// Hashes several fields with a 0xff separator, which cannot occur in UTF-8.
pub fn fnv1a64_fields(fields: &[&[u8]]) -> u64 {
    let mut h = FNV64_OFFSET;
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            h ^= 0xff;
            h = h.wrapping_mul(FNV64_PRIME);
        }
        for &b in *f {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV64_PRIME);
        }
    }
    h
}

/// Seed for one independent random stream, e.g. one (class, technique) pair.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let s = seed.to_le_bytes();
    let mut fields: Vec<&[u8]> = vec![&s];
    fields.extend(parts.iter().map(|p| p.as_bytes()));
    fnv1a64_fields(&fields)
}
