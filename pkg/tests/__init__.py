# Tests initialization