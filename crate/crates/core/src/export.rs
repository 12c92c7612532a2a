//! CSV output helpers. Every file starts with `#` comment lines carrying
//! the tool version and a JSON echo of the parameters, so a result can be
//! traced back to its inputs.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

pub const TOOL_NAME: &str = "spdc-delay";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn write_header<W: Write, P: Serialize + ?Sized>(out: &mut W, kind: &str, params: &P) -> Result<()> {
    writeln!(out, "# tool={TOOL_NAME} version={TOOL_VERSION} kind={kind}")?;
    writeln!(out, "# params={}", serde_json::to_string(params)?)?;
    Ok(())
}

/// Strips `#` comment lines and blank lines, keeping 1-based row numbers.
pub fn data_rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_deterministic() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let p = serde_json::json!({"z_c_mm": 1.0, "temperature_c": 59.0});
        write_header(&mut a, "delay", &p).unwrap();
        write_header(&mut b, "delay", &p).unwrap();
        assert_eq!(a, b);
        let s = String::from_utf8(a).unwrap();
        assert!(s.starts_with("# tool=spdc-delay version="));
        assert!(s.contains("\"z_c_mm\":1.0"));
    }

    #[test]
    fn data_rows_skip_comments() {
        let rows: Vec<_> = data_rows("# x\n\na,b\n1,2\n").collect();
        assert_eq!(rows, vec![(3, "a,b"), (4, "1,2")]);
    }
}
