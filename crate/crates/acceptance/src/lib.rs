//! Holds the `acceptance` integration target. Run it with
//! `cargo test -p vsl-acceptance --test acceptance`.
