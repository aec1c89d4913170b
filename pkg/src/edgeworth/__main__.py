from edgeworth.cli import main

main()
