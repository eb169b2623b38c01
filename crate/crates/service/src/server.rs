//! WebSocket transport on axum.
//!
//! `GET /ws` upgrades to the session channel. A new connection first gets the
//! current state, then every broadcast frame plus direct replies to its own
//! requests.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::protocol::{decode_client, encode, ClientMsg, ServerMsg, BAD_MESSAGE, REJECTED};
use crate::realtime::LoopClient;
use crate::session::Setup;

/// Answers one client frame. Everything except the replies goes through
/// the loop's channels.
pub fn handle_text(client: &LoopClient, text: &str) -> ServerMsg {
    let msg = match decode_client(text) {
        Ok(m) => m,
        Err(e) => return ServerMsg::error(BAD_MESSAGE, e),
    };
    let result = match msg {
        ClientMsg::Feedback { value, trace } => client.feedback(value, trace.as_deref()),
        ClientMsg::Control { cmd } => client.control(cmd),
        ClientMsg::Configure { scenario, learner, script } => {
            Setup::parse(&scenario, &learner, script.as_deref()).and_then(|s| client.configure(s))
        }
        ClientMsg::Query => return client.snapshot(),
    };
    match result {
        Ok(step) => ServerMsg::Ack { step },
        Err(e) => ServerMsg::error(REJECTED, e),
    }
}

pub fn router(client: LoopClient) -> Router {
    Router::new().route("/ws", get(upgrade)).route("/health", get(|| async { "ok" })).with_state(Arc::new(client))
}

async fn upgrade(ws: WebSocketUpgrade, State(client): State<Arc<LoopClient>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, client))
}

async fn connection(socket: WebSocket, client: Arc<LoopClient>) {
    let (mut sink, mut stream) = socket.split();
    // subscribe before the snapshot so nothing falls between the two
    let mut events = client.subscribe();
    if sink.send(Message::Text(encode(&client.snapshot()).into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            frame = stream.next() => match frame {
                Some(Ok(Message::Text(text))) => {
                    let reply = handle_text(&client, text.as_str());
                    if sink.send(Message::Text(encode(&reply).into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    let reply = ServerMsg::error(BAD_MESSAGE, "expected a text frame");
                    if sink.send(Message::Text(encode(&reply).into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            event = events.recv() => match event {
                Ok(text) => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Lagged(n)) => log::debug!("slow client skipped {n} frames"),
                Err(RecvError::Closed) => break,
            },
        }
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    client: LoopClient,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(client)).with_graceful_shutdown(shutdown).await
}

/// Binds `addr`; port 0 picks a free one.
pub async fn bind(addr: SocketAddr) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}
