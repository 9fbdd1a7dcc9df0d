"""Long-running coordinator tying allocator, bindings, enforcement, and emulator."""
