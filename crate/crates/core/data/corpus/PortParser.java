package corpus;

public class PortParser {
    public int port(String raw) {
        String digits = raw.trim();
        int value = Integer.parseInt(digits);
        if (value < 0) {
            value = 0;
        }
        return value;
    }
}
