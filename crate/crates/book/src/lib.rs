//! The guide in `book/` is plain mdbook, which cannot run listings that
//! depend on workspace crates. Each chapter is included here as a module doc
//! so `cargo test --doc` compiles and runs its Rust blocks. One module per
//! chapter keeps failures traceable to their file.

#[cfg(doctest)]
macro_rules! chapters {
    ($($module:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $module {}
        )*
    };
}

#[cfg(doctest)]
chapters! {
    introduction => "introduction.md",
    audio => "audio.md",
    augmentation => "augmentation.md",
    spectral => "spectral.md",
    global => "global.md",
    network => "network.md",
    training => "training.md",
    cli => "cli.md",
}
