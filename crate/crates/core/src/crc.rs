//! Table-driven CRC-32 over the two protection polynomials.
//!
//! Polynomials are given in Koopman implicit-plus-one notation: the stated
//! value omits both the x^32 term and the +1 term. `0xf8c9140a` protects
//! whole frames (HD 8 up to 448 data bits), `0x9d7f97d6` protects the
//! latitude/longitude word (HD 9).
//!
//! Convention: MSB-first, initial remainder `0xFFFFFFFF`, no input or output
//! reflection, no final xor. The nonzero init makes leading-zero insertion
//! detectable.

/// Frame-protection polynomial, Koopman notation.
pub const FRAMING_POLY: u32 = 0xf8c9_140a;

/// Position-word polynomial, Koopman notation.
pub const POSITION_POLY: u32 = 0x9d7f_97d6;

/// Initial remainder for both CRCs.
pub const CRC_INIT: u32 = 0xffff_ffff;

/// Converts a Koopman implicit-plus-one polynomial to the MSB-first
/// feedback form (low 32 bits of the full 33-bit divisor).
pub const fn koopman_to_normal(poly: u32) -> u32 {
    (poly << 1) | 1
}

const fn build_table(normal_poly: u32) -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u32) << 24;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000_0000 != 0 {
                (crc << 1) ^ normal_poly
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// A CRC-32 engine for one polynomial.
pub struct Crc32 {
    table: [u32; 256],
}

impl Crc32 {
    pub const fn new(koopman_poly: u32) -> Self {
        Crc32 {
            table: build_table(koopman_to_normal(koopman_poly)),
        }
    }

    /// Checksum of `data` under the fixed convention (see module docs).
    pub fn checksum(&self, data: &[u8]) -> u32 {
        let mut crc = CRC_INIT;
        for &byte in data {
            let idx = ((crc >> 24) ^ byte as u32) as usize;
            crc = (crc << 8) ^ self.table[idx];
        }
        crc
    }
}

/// Engine for the frame-protection polynomial.
pub static FRAMING_CRC: Crc32 = Crc32::new(FRAMING_POLY);

/// Engine for the position-word polynomial.
pub static POSITION_CRC: Crc32 = Crc32::new(POSITION_POLY);

/// Frame CRC over `data` with polynomial [`FRAMING_POLY`].
pub fn framing_crc(data: &[u8]) -> u32 {
    FRAMING_CRC.checksum(data)
}

/// Position CRC over `data` with polynomial [`POSITION_POLY`].
pub fn position_crc(data: &[u8]) -> u32 {
    POSITION_CRC.checksum(data)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Bit-serial long-division reference, independent of the table path.

    use super::{koopman_to_normal, CRC_INIT};

    /// Processes one data bit at a time, MSB first within each byte.
    pub fn bit_serial_crc(koopman_poly: u32, data: &[u8]) -> u32 {
        let poly = koopman_to_normal(koopman_poly);
        let mut reg = CRC_INIT;
        for &byte in data {
            for bit in (0..8).rev() {
                let incoming = (byte >> bit) & 1;
                let top = ((reg >> 31) as u8) ^ incoming;
                reg <<= 1;
                if top != 0 {
                    reg ^= poly;
                }
            }
        }
        reg
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::bit_serial_crc;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Regression constants frozen from the bit-serial oracle.
    const EMPTY_FRAMING: u32 = 0xffff_ffff;
    const CHECK_FRAMING: u32 = 0xed2c_5f4e; // "123456789"
    const CHECK_POSITION: u32 = 0x1578_f854; // "123456789"
    const ZEROS56_FRAMING: u32 = 0x45c6_d240;
    const ZEROS16_POSITION: u32 = 0x0a3d_4856;

    #[test]
    fn empty_input_is_the_init_value() {
        assert_eq!(bit_serial_crc(FRAMING_POLY, b""), EMPTY_FRAMING);
        assert_eq!(framing_crc(b""), EMPTY_FRAMING);
    }

    #[test]
    fn pinned_check_values() {
        assert_eq!(bit_serial_crc(FRAMING_POLY, b"123456789"), CHECK_FRAMING);
        assert_eq!(framing_crc(b"123456789"), CHECK_FRAMING);
        assert_eq!(bit_serial_crc(POSITION_POLY, b"123456789"), CHECK_POSITION);
        assert_eq!(position_crc(b"123456789"), CHECK_POSITION);
    }

    #[test]
    fn pinned_zero_fills() {
        assert_eq!(framing_crc(&[0u8; 56]), ZEROS56_FRAMING);
        assert_eq!(position_crc(&[0u8; 16]), ZEROS16_POSITION);
    }

    #[test]
    fn table_matches_bit_serial_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x51de_c0de);
        for _ in 0..2000 {
            let len = rng.gen_range(0..=256);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(framing_crc(&data), bit_serial_crc(FRAMING_POLY, &data));
            assert_eq!(position_crc(&data), bit_serial_crc(POSITION_POLY, &data));
        }
    }

    #[test]
    fn single_bit_flip_always_detected() {
        let data = *b"horus profile frame bytes";
        let crc = framing_crc(&data);
        for byte in 0..data.len() {
            for bit in 0..8 {
                let mut flipped = data;
                flipped[byte] ^= 1 << bit;
                assert_ne!(framing_crc(&flipped), crc);
            }
        }
        // flips inside the stored CRC word also fail verification
        for bit in 0..32 {
            assert_ne!(crc ^ (1 << bit), crc);
        }
    }
}
