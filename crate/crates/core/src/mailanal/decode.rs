//! Encoding-evasion normalization for mail bodies. Spam operators layer
//! quoted-printable transfer encoding, UTF-8, and mathematical
//! alphanumeric homoglyphs to slip keyword filters; this decoder peels all
//! of them and yields lowercase whitespace-collapsed text.
//!
//! The pipeline runs to a fixed point so layered encodings (a QP escape
//! whose decoded bytes are again QP) fully unwrap and decoding is
//! idempotent by construction. Every pass either shrinks the byte string
//! or leaves it unchanged, so the loop terminates.

/// Normalized text plus a count of byte sequences that were not valid
/// UTF-8 and got replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    pub invalid_utf8: usize,
}

const MAX_PASSES: usize = 8;

/// Decode quoted-printable escapes, interpret the bytes as UTF-8, map
/// mathematical alphanumeric symbols (U+1D400..U+1D7FF) to their ASCII
/// equivalents, lowercase, and collapse whitespace. Repeats until stable.
pub fn decode_evasions(raw: &[u8]) -> Decoded {
    let mut bytes = raw.to_vec();
    let mut invalid_utf8 = 0;
    for _ in 0..MAX_PASSES {
        let unescaped = decode_quoted_printable(&bytes);
        let (text, bad) = utf8_lossy_counted(&unescaped);
        invalid_utf8 += bad;
        let mapped: String = text.chars().map(ascii_equivalent).collect();
        let collapsed: String = mapped
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let next = collapsed.into_bytes();
        if next == bytes {
            break;
        }
        bytes = next;
    }
    let text = String::from_utf8(bytes).expect("normalization output is UTF-8");
    Decoded { text, invalid_utf8 }
}

/// Decode =XX escapes and remove soft line breaks. An escape that is not
/// two hex digits passes through verbatim.
fn decode_quoted_printable(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len());
    let mut i = 0;
    while i < input.len() {
        if input[i] != b'=' {
            out.push(input[i]);
            i += 1;
            continue;
        }
        if input.get(i + 1) == Some(&b'\r') && input.get(i + 2) == Some(&b'\n') {
            i += 3;
            continue;
        }
        if input.get(i + 1) == Some(&b'\n') {
            i += 2;
            continue;
        }
        match (input.get(i + 1).and_then(hex_digit), input.get(i + 2).and_then(hex_digit)) {
            (Some(hi), Some(lo)) => {
                out.push(hi * 16 + lo);
                i += 3;
            }
            _ => {
                out.push(b'=');
                i += 1;
            }
        }
    }
    out
}

fn hex_digit(byte: &u8) -> Option<u8> {
    (*byte as char).to_digit(16).map(|d| d as u8)
}

fn utf8_lossy_counted(bytes: &[u8]) -> (String, usize) {
    let mut out = String::with_capacity(bytes.len());
    let mut rest = bytes;
    let mut bad = 0;
    loop {
        match std::str::from_utf8(rest) {
            Ok(tail) => {
                out.push_str(tail);
                break;
            }
            Err(err) => {
                let (valid, after) = rest.split_at(err.valid_up_to());
                out.push_str(std::str::from_utf8(valid).expect("prefix is valid"));
                out.push('\u{FFFD}');
                bad += 1;
                let skip = err.error_len().unwrap_or(after.len());
                rest = &after[skip..];
            }
        }
    }
    (out, bad)
}

/// ASCII equivalent of a mathematical alphanumeric symbol. The block lays
/// out thirteen 52-letter Latin alphabets, two dotless letters, styled
/// Greek (left unchanged: no ASCII equivalent), and five 10-digit runs.
fn ascii_equivalent(c: char) -> char {
    let cp = c as u32;
    match cp {
        0x1D400..=0x1D6A3 => {
            let pos = ((cp - 0x1D400) % 52) as u8;
            if pos < 26 {
                (b'A' + pos) as char
            } else {
                (b'a' + pos - 26) as char
            }
        }
        0x1D6A4 => 'i',
        0x1D6A5 => 'j',
        0x1D7CE..=0x1D7FF => (b'0' + ((cp - 0x1D7CE) % 10) as u8) as char,
        _ => c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn layered_digit_homoglyphs_decode_to_plain_digits() {
        let got = decode_evasions(b"=F0=9D=9F=BF=F0=9D=9F=B9=F0=9D=9F=B8=F0=9D=9F=B9");
        assert_eq!(got.text, "9323");
        assert_eq!(got.invalid_utf8, 0);
    }

    #[test]
    fn every_monospace_digit_maps_to_its_value() {
        // Independent table: code point and expected digit, straight from
        // the Unicode block layout.
        let table = [
            (0x1D7F6u32, '0'),
            (0x1D7F7, '1'),
            (0x1D7F8, '2'),
            (0x1D7F9, '3'),
            (0x1D7FA, '4'),
            (0x1D7FB, '5'),
            (0x1D7FC, '6'),
            (0x1D7FD, '7'),
            (0x1D7FE, '8'),
            (0x1D7FF, '9'),
        ];
        let input: String = table.iter().map(|&(cp, _)| char::from_u32(cp).unwrap()).collect();
        let want: String = table.iter().map(|&(_, d)| d).collect();
        assert_eq!(decode_evasions(input.as_bytes()).text, want);
        assert_eq!(want, "0123456789");
    }

    #[test]
    fn styled_letters_map_to_ascii() {
        // Bold capital A is the first code point of the block.
        let bold_a = char::from_u32(0x1D400).unwrap();
        assert_eq!(decode_evasions(bold_a.to_string().as_bytes()).text, "a");
        // Monospace small z is the last letter before the dotless pair.
        let mono_z = char::from_u32(0x1D6A3).unwrap();
        assert_eq!(decode_evasions(mono_z.to_string().as_bytes()).text, "z");
    }

    #[test]
    fn ascii_input_is_lowercased_and_collapsed() {
        let got = decode_evasions(b"  The PASSWORD is:\t9323,\r\n I am eager ");
        assert_eq!(got.text, "the password is: 9323, i am eager");
    }

    #[test]
    fn soft_breaks_vanish_and_bad_escapes_pass_through() {
        assert_eq!(decode_evasions(b"foo=\r\nbar baz=\nqux").text, "foobar bazqux");
        assert_eq!(decode_evasions(b"50=G1 off").text, "50=g1 off");
        assert_eq!(decode_evasions(b"ends with =").text, "ends with =");
    }

    #[test]
    fn double_encoded_escapes_unwrap_to_a_fixed_point() {
        // =3D decodes to '='; the second pass consumes the revealed =41.
        assert_eq!(decode_evasions(b"=3D41").text, "a");
    }

    #[test]
    fn invalid_utf8_is_replaced_and_counted() {
        let got = decode_evasions(&[b'a', 0xFF, b'b', 0xC3]);
        assert_eq!(got.text, "a\u{FFFD}b\u{FFFD}");
        assert_eq!(got.invalid_utf8, 2);
    }

    #[test]
    fn decoding_is_idempotent_on_arbitrary_bytes() {
        let mut rng = crate::synth::rng(31);
        for _ in 0..500 {
            let len = rng.random_range(0..64);
            let bytes: Vec<u8> = (0..len).map(|_| rng.random_range(0..=255)).collect();
            let once = decode_evasions(&bytes);
            let twice = decode_evasions(once.text.as_bytes());
            assert_eq!(once.text, twice.text, "input {bytes:02x?}");
        }
    }
}
