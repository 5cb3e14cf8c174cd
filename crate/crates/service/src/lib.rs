//! HTTP enrollment and verification service.
//!
//! Routes:
//!
//! | method | path                        | body                         |
//! |--------|-----------------------------|------------------------------|
//! | POST   | `/detect`                   | image                        |
//! | POST   | `/enroll`                   | user, palm, image            |
//! | POST   | `/verify`                   | user, image                  |
//! | GET    | `/enrollments/{user}`       |                              |
//! | DELETE | `/enrollments/{user}/{palm}`|                              |
//! | GET    | `/health`                   |                              |
//!
//! Images come as a multipart `image` field or a base64 `image` string in a
//! JSON body. `palm` is `left` or `right`.

pub mod api;
pub mod backend;
pub mod store;

pub use api::{router, AppState};
pub use store::TemplateStore;

use tokio::net::TcpListener;

/// Serves until Ctrl-C.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
