#![no_main]

use libfuzzer_sys::fuzz_target;
use msrb::config::Config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = Config::from_toml(text) {
            // a parsed config must survive its own canonical form
            let again = Config::from_toml(&cfg.canonical()).expect("canonical form reparses");
            assert_eq!(again.content_hash(), cfg.content_hash());
        }
    }
});
