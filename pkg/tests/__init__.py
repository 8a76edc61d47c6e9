# Tests for the cassi toolkit
