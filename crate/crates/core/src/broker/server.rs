//! TCP front end: one thread per connection, one broker behind a mutex.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;

use super::protocol::handle_line;
use super::Broker;

pub struct Server {
    listener: TcpListener,
    broker: Arc<Mutex<Broker>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, broker: Broker) -> std::io::Result<Server> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            broker: Arc::new(Mutex::new(broker)),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn broker(&self) -> Arc<Mutex<Broker>> {
        Arc::clone(&self.broker)
    }

    /// Accepts connections until the listener fails.
    pub fn run(self) -> std::io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let broker = Arc::clone(&self.broker);
            thread::spawn(move || {
                if let Err(e) = serve_connection(stream, &broker) {
                    log::debug!("connection closed: {e}");
                }
            });
        }
        Ok(())
    }
}

/// Answers each request line on `stream` with one response line.
pub fn serve_connection(stream: TcpStream, broker: &Mutex<Broker>) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.split(b'\n') {
        let line = line?;
        let text = String::from_utf8_lossy(&line);
        let text = text.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }
        let response = {
            let mut b = broker.lock().unwrap_or_else(|p| p.into_inner());
            handle_line(&mut b, text)
        };
        writer.write_all(response.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}
