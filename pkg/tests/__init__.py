# topomotion test suite
