"""Long-tail multi-class learning with error-correcting label codes."""
