//! Table-driven CRC-32 (IEEE, reflected) and CRC-16/CCITT-FALSE.

const CRC32_POLY_REFLECTED: u32 = 0xEDB8_8320;
const CRC16_POLY: u16 = 0x1021;

const CRC32_TABLE: [u32; 256] = {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { (c >> 1) ^ CRC32_POLY_REFLECTED } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
};

const CRC16_TABLE: [u16; 256] = {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = (i as u16) << 8;
        let mut k = 0;
        while k < 8 {
            c = if c & 0x8000 != 0 { (c << 1) ^ CRC16_POLY } else { c << 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
};

/// Value of `crc32(data ‖ crc32(data).to_le_bytes())` for any `data`.
pub const CRC32_RESIDUE: u32 = 0x2144_DF1C;

/// Standard CRC-32 (polynomial 0x04C11DB7 reflected, init and xorout all ones).
pub fn crc32(data: &[u8]) -> u32 {
    !data.iter().fold(!0u32, |crc, &b| {
        (crc >> 8) ^ CRC32_TABLE[((crc ^ b as u32) & 0xFF) as usize]
    })
}

/// CRC-16/CCITT-FALSE: polynomial 0x1021, init 0xFFFF, no reflection.
pub fn crc16_ccitt(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFFu16, |crc, &b| {
        (crc << 8) ^ CRC16_TABLE[(((crc >> 8) as u8) ^ b) as usize]
    })
}
