# Tests for arl-lab
