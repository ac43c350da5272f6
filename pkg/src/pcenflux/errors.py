class NumericError(ArithmeticError):
    """Raised when a detector hits an undefined value (zero divisor, log of zero).

    Carries the offending frame (and band, when known) so callers can report
    exactly where a recording broke the computation.
    """

    def __init__(self, message, frame=None, band=None):
        super().__init__(message)
        self.frame = frame
        self.band = band
