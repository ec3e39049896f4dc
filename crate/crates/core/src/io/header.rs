use crate::error::{Error, Result};

/// Whitespace-separated header tokens of the netpbm family, with `#` comments.
pub(super) struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> HeaderReader<'a> {
    pub(super) fn new(bytes: &'a [u8], format: &'static str) -> Self {
        HeaderReader { bytes, pos: 0, format }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|b| *b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    pub(super) fn token(&mut self) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(self.format, "header ends early"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(self.format, "header is not ASCII"))
    }

    pub(super) fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let format = self.format;
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::format(format, format!("bad {what} {t:?}")))
    }

    /// Consumes the single whitespace byte that separates header and payload
    /// and returns the payload.
    pub(super) fn payload(self) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(Error::format(self.format, "missing separator before payload")),
        }
    }
}
