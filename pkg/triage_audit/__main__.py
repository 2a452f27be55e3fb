import sys

from triage_audit.cli import main

sys.exit(main())
