//! JSON encoding shared by every on-disk format.
//!
//! Floating-point values are always written in scientific notation with 17
//! significant digits so that every `f64` survives a write/read cycle
//! bit-for-bit and files stay diff-able across platforms.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

fn write_decimal<W: ?Sized + io::Write>(writer: &mut W, value: f64) -> io::Result<()> {
    write!(writer, "{value:.16e}")
}

/// Compact single-line output with 17-significant-digit floats.
#[derive(Debug, Default, Clone, Copy)]
pub struct DecimalFormatter;

impl Formatter for DecimalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write_decimal(writer, value)
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write_decimal(writer, f64::from(value))
    }
}

/// Indented output with 17-significant-digit floats.
pub struct PrettyDecimalFormatter<'a>(PrettyFormatter<'a>);

impl Default for PrettyDecimalFormatter<'_> {
    fn default() -> Self {
        Self(PrettyFormatter::with_indent(b"  "))
    }
}

impl Formatter for PrettyDecimalFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write_decimal(writer, value)
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write_decimal(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes `value` as one compact JSON line (no trailing newline).
pub fn to_line<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, DecimalFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Serializes `value` as an indented JSON document.
pub fn to_pretty<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, PrettyDecimalFormatter::default());
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Serde adapter for reals that may legitimately be infinite (degenerate
/// ratios, the ROC anchor threshold). Infinities are written as the strings
/// `"+inf"` / `"-inf"`.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if *value == f64::INFINITY {
            ser.serialize_str("+inf")
        } else if *value == f64::NEG_INFINITY {
            ser.serialize_str("-inf")
        } else if value.is_nan() {
            ser.serialize_str("nan")
        } else {
            ser.serialize_f64(*value)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        match Repr::deserialize(de)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "+inf" | "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_significant_digits() {
        let line = to_line(&vec![0.5, 0.1, -3.0e-300]).unwrap();
        assert_eq!(
            line,
            "[5.0000000000000000e-1,1.0000000000000001e-1,-3.0000000000000002e-300]"
        );
        let back: Vec<f64> = serde_json::from_str(&line).unwrap();
        assert_eq!(back, vec![0.5, 0.1, -3.0e-300]);
    }

    #[test]
    fn extended_values_round_trip() {
        #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
        struct W {
            #[serde(with = "extended_f64")]
            v: f64,
        }
        for v in [f64::INFINITY, f64::NEG_INFINITY, 1.25] {
            let s = to_line(&W { v }).unwrap();
            let back: W = serde_json::from_str(&s).unwrap();
            assert_eq!(back.v, v);
        }
    }
}
