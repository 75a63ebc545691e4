use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use serde_json::Value;

use crate::error::{Result, ServiceError};
use crate::protocol::{Request, Response};

/// A blocking client holding one connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let writer = TcpStream::connect(addr)?;
        let reader = BufReader::new(writer.try_clone()?);
        Ok(Client { reader, writer })
    }

    pub fn send(&mut self, req: &Request) -> Result<Response> {
        let mut text = serde_json::to_string(req).expect("requests serialize");
        text.push('\n');
        self.writer.write_all(text.as_bytes())?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ServiceError::Io(std::io::ErrorKind::UnexpectedEof.into()));
        }
        serde_json::from_str(&line).map_err(|e| ServiceError::Corrupt(format!("response: {e}")))
    }

    pub fn call(&mut self, verb: &str, task_id: Option<&str>, payload: Value) -> Result<Response> {
        self.send(&Request::new(verb, task_id, payload))
    }
}
