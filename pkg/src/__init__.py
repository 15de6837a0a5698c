"""AutoCycle-VC - zero-shot voice conversion package."""
