from dotenv import load_dotenv
from betac_toolkit.cli import main

load_dotenv()  # Load .env file

if __name__ == "__main__":
    raise SystemExit(main())
